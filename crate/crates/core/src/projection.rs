//! 2-D PCA of an atlas's code matrix, for looking at intra-class clusters.
//!
//! Codes are unpacked to 0/1, column-centered, and projected on the top two
//! principal directions. When the atlas has fewer entries than bits the K×K
//! Gram matrix is decomposed instead of the N×N covariance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::atlas::Atlas;
use crate::error::{PerceptError, Result};
use crate::meta::{SampleMetadata, INTRA_KEY};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    pub intra_tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
    /// Fraction of the total variance along each direction.
    pub explained_variance: [f64; 2],
    /// Covariance eigenvalues (divisor K − 1) of the two directions.
    pub eigenvalues: [f64; 2],
    /// Orthonormal directions of length N. For N = 1 the second is zero.
    pub component_vectors: [Vec<f64>; 2],
}

/// Zero-variance threshold relative to the total sum of squares.
const RANK_EPS: f64 = 1e-12;

/// Centered K×N 0/1 matrix of the atlas codes.
pub fn centered_code_matrix(atlas: &Atlas) -> DMatrix<f64> {
    let k = atlas.len();
    let n = atlas.code_length;
    let mut x = DMatrix::<f64>::zeros(k, n);
    for (i, e) in atlas.entries.iter().enumerate() {
        for j in e.code.bits.ones() {
            x[(i, j)] = 1.0;
        }
    }
    for j in 0..n {
        let mean = x.column(j).sum() / k as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    x
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Flips `v` so its largest-magnitude coordinate is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

/// A unit vector orthogonal to every vector in `basis`, built from the
/// standard basis vector with the largest residual.
fn orthogonal_complement(n: usize, basis: &[DVector<f64>]) -> DVector<f64> {
    let mut best = DVector::zeros(n);
    let mut best_norm = 0.0;
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        for b in basis {
            let d = b.dot(&e);
            e -= b * d;
        }
        let norm = e.norm();
        if norm > best_norm + 1e-12 {
            best_norm = norm;
            best = e;
        }
    }
    if best_norm > 0.0 {
        best / best_norm
    } else {
        best
    }
}

/// Top principal directions of the centered matrix `x`, with the eigenvalues
/// of `xᵀx` (not yet divided by K − 1).
fn principal_directions(x: &DMatrix<f64>, total: f64) -> Vec<(f64, DVector<f64>)> {
    let (k, n) = x.shape();
    let wanted = 2.min(n);
    let mut out: Vec<(f64, DVector<f64>)> = Vec::with_capacity(wanted);
    let pairs = if k < n {
        sorted_eigen(x * x.transpose())
            .into_iter()
            .map(|(l, u)| {
                if l > RANK_EPS * total {
                    let v = x.transpose() * u / l.sqrt();
                    (l, v)
                } else {
                    (0.0, DVector::zeros(n))
                }
            })
            .collect::<Vec<_>>()
    } else {
        sorted_eigen(x.transpose() * x)
    };
    for (l, v) in pairs.into_iter().take(wanted) {
        if l > RANK_EPS * total {
            out.push((l, canonical_sign(v)));
        } else {
            let basis: Vec<DVector<f64>> = out.iter().map(|(_, v)| v.clone()).collect();
            out.push((0.0, canonical_sign(orthogonal_complement(n, &basis))));
        }
    }
    out
}

pub fn project(atlas: &Atlas) -> Result<Projection2D> {
    let k = atlas.len();
    if k < 3 {
        return Err(PerceptError::InsufficientData(format!(
            "projection needs at least 3 atlas entries, got {k}"
        )));
    }
    let n = atlas.code_length;
    let x = centered_code_matrix(atlas);
    let total = x.norm_squared();

    let tags: Vec<String> = atlas
        .entries
        .iter()
        .map(|e| e.metadata.get(INTRA_KEY).cloned().unwrap_or_default())
        .collect();

    if total <= 0.0 || n == 0 {
        let unit = |j: usize| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        return Ok(Projection2D {
            points: atlas
                .entries
                .iter()
                .zip(tags)
                .map(|(e, intra_tag)| ProjectedPoint {
                    sample_id: e.sample_id().to_string(),
                    x: 0.0,
                    y: 0.0,
                    intra_tag,
                })
                .collect(),
            explained_variance: [0.0, 0.0],
            eigenvalues: [0.0, 0.0],
            component_vectors: [unit(0), unit(1)],
        });
    }

    let dirs = principal_directions(&x, total);
    let v1 = dirs[0].1.clone();
    let (l2, v2) = dirs
        .get(1)
        .cloned()
        .unwrap_or_else(|| (0.0, DVector::zeros(n)));
    let xs = &x * &v1;
    let ys = &x * &v2;
    let denom = (k - 1) as f64;
    Ok(Projection2D {
        points: atlas
            .entries
            .iter()
            .zip(tags)
            .enumerate()
            .map(|(i, (e, intra_tag))| ProjectedPoint {
                sample_id: e.sample_id().to_string(),
                x: xs[i],
                y: ys[i],
                intra_tag,
            })
            .collect(),
        explained_variance: [dirs[0].0 / total, l2 / total],
        eigenvalues: [dirs[0].0 / denom, l2 / denom],
        component_vectors: [v1.iter().copied().collect(), v2.iter().copied().collect()],
    })
}

impl Projection2D {
    /// Fills empty intra tags from `meta`.
    pub fn with_tags(mut self, meta: &SampleMetadata) -> Self {
        for p in &mut self.points {
            if p.intra_tag.is_empty() {
                if let Some(t) = meta.intra(&p.sample_id) {
                    p.intra_tag = t.to_string();
                }
            }
        }
        self
    }

    /// Mean 2-D position per intra tag.
    pub fn centroids(&self) -> BTreeMap<String, (f64, f64)> {
        let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for p in &self.points {
            let e = acc.entry(p.intra_tag.clone()).or_default();
            e.0 += p.x;
            e.1 += p.y;
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(t, (x, y, n))| (t, (x / n as f64, y / n as f64)))
            .collect()
    }

    /// Mean distance of points to their own intra-tag centroid.
    pub fn mean_within_spread(&self) -> f64 {
        let c = self.centroids();
        let total: f64 = self
            .points
            .iter()
            .map(|p| {
                let (cx, cy) = c[&p.intra_tag];
                ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()
            })
            .sum();
        total / self.points.len() as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# explained_variance={:.6},{:.6}",
            self.explained_variance[0], self.explained_variance[1]
        );
        s.push_str("sample_id\tx\ty\tintra\n");
        for p in &self.points {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{}", p.sample_id, p.x, p.y, p.intra_tag);
        }
        s
    }

    /// Static scatter plot, one color per intra tag.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 480.0;
        const PAD: f64 = 40.0;
        const PALETTE: [&str; 8] = [
            "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
        ];
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let span = |a: f64, b: f64| if b - a > 0.0 { b - a } else { 1.0 };
        let sx = (SIZE - 2.0 * PAD) / span(x0, x1);
        let sy = (SIZE - 2.0 * PAD) / span(y0, y1);
        let centroids = self.centroids();
        let colors: BTreeMap<&str, &str> = centroids
            .keys()
            .map(String::as_str)
            .zip(PALETTE.iter().cycle().copied())
            .collect::<BTreeMap<_, _>>();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
            escape(title)
        );
        for p in &self.points {
            let cx = PAD + (p.x - x0) * sx;
            let cy = SIZE - PAD - (p.y - y0) * sy;
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}"><title>{}</title></circle>"#,
                colors.get(p.intra_tag.as_str()).copied().unwrap_or("#444"),
                escape(&p.sample_id)
            );
        }
        for (i, (tag, color)) in colors.iter().enumerate() {
            let y = PAD + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{y}" r="4" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
                SIZE - 110.0,
                SIZE - 100.0,
                y + 4.0,
                escape(tag)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::build_atlas;
    use crate::bits::PackedBits;
    use crate::encoder::PerceptualCode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn atlas_from(rows: &[Vec<bool>], tags: &[&str]) -> Atlas {
        let mut meta = SampleMetadata::new();
        let codes = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let id = format!("s{i:03}");
                if let Some(t) = tags.get(i) {
                    meta.insert(id.clone(), INTRA_KEY, *t);
                }
                PerceptualCode {
                    bits: PackedBits::from_bools(r),
                    class_label: "c".into(),
                    sample_id: id,
                }
            })
            .collect();
        build_atlas(codes, &meta).unwrap()
    }

    fn assert_orthonormal(p: &Projection2D) {
        let [a, b] = &p.component_vectors;
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(a, a) - 1.0).abs() < 1e-8);
        assert!((dot(b, b) - 1.0).abs() < 1e-8);
        assert!(dot(a, b).abs() < 1e-8);
    }

    #[test]
    fn identical_codes_project_to_origin() {
        let p = project(&atlas_from(&vec![vec![true, false, true]; 4], &[])).unwrap();
        assert!(p.points.iter().all(|q| q.x == 0.0 && q.y == 0.0));
        assert_eq!(p.explained_variance, [0.0, 0.0]);
        assert_orthonormal(&p);
    }

    #[test]
    fn unit_square() {
        let rows = vec![
            vec![false, false],
            vec![false, true],
            vec![true, false],
            vec![true, true],
        ];
        let p = project(&atlas_from(&rows, &[])).unwrap();
        assert!((p.explained_variance[0] - 0.5).abs() < 1e-9);
        assert!((p.explained_variance[1] - 0.5).abs() < 1e-9);
        // covariance is 0.25·I with divisor K = 4, so 1/3 with divisor K − 1
        assert!((p.eigenvalues[0] - 1.0 / 3.0).abs() < 1e-9);
        assert_orthonormal(&p);
        for q in &p.points {
            assert!(((q.x * q.x + q.y * q.y).sqrt() - 0.5f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_entries() {
        let rows = vec![vec![true], vec![false]];
        assert!(matches!(project(&atlas_from(&rows, &[])), Err(PerceptError::InsufficientData(_))));
    }

    #[test]
    fn rank_one_data_still_orthonormal() {
        let rows = vec![vec![true, true, false], vec![false, false, false], vec![true, true, false]];
        let p = project(&atlas_from(&rows, &[])).unwrap();
        assert_orthonormal(&p);
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-12);
        assert!(p.points.iter().all(|q| q.y.abs() < 1e-12));
    }

    fn random_rows(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<Vec<bool>> {
        (0..k).map(|_| (0..n).map(|_| rng.random_bool(0.3)).collect()).collect()
    }

    #[test]
    fn captured_variance_matches_full_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, n) in &[(10, 64), (40, 16), (64, 64), (5, 33)] {
            let atlas = atlas_from(&random_rows(&mut rng, k, n), &[]);
            let p = project(&atlas).unwrap();
            assert_orthonormal(&p);
            let x = centered_code_matrix(&atlas);
            let cov = x.transpose() * &x / (k - 1) as f64;
            let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            let top2 = ev[0] + ev[1];
            let got = p.eigenvalues[0] + p.eigenvalues[1];
            assert!((got - top2).abs() <= 1e-6 * top2, "K={k} N={n}: {got} vs {top2}");
            // the scores really carry that variance
            let var = |f: fn(&ProjectedPoint) -> f64| p.points.iter().map(|q| f(q).powi(2)).sum::<f64>() / (k - 1) as f64;
            assert!((var(|q| q.x) + var(|q| q.y) - top2).abs() <= 1e-6 * top2);
        }
    }

    #[test]
    fn sign_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = project(&atlas_from(&random_rows(&mut rng, 12, 20), &[])).unwrap();
        for v in &p.component_vectors {
            let top = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(top > 0.0);
        }
    }

    #[test]
    fn separated_groups_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 120;
        let mut rows = Vec::new();
        let mut tags = Vec::new();
        for i in 0..60 {
            let group = i % 2;
            let row: Vec<bool> = (0..n)
                .map(|j| {
                    let in_mask = (j < 30 && group == 0) || ((30..60).contains(&j) && group == 1);
                    if in_mask { rng.random_bool(0.95) } else { rng.random_bool(0.05) }
                })
                .collect();
            rows.push(row);
            tags.push(if group == 0 { "a" } else { "b" });
        }
        let p = project(&atlas_from(&rows, &tags)).unwrap();
        let c = p.centroids();
        let (a, b) = (c["a"], c["b"]);
        let between = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        assert!(between > 5.0 * p.mean_within_spread());
        assert!(p.to_svg("t").starts_with("<svg"));
        assert!(p.to_tsv().lines().count() == 62);
    }
}
