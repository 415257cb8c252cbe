//! Principal-component compression of descriptors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::Descriptor;

/// Mean and the top `k` principal directions of a descriptor set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorBasis {
    mean: Vec<f32>,
    /// `k` rows of length `dim`, row-major.
    components: Vec<f32>,
    /// Eigenvalues of the retained components, non-increasing.
    eigenvalues: Vec<f64>,
    k: usize,
    dim: usize,
}

impl DescriptorBasis {
    /// Assembles a basis from parts, e.g. after deserialization.
    pub fn from_parts(mean: Vec<f32>, components: Vec<f32>, eigenvalues: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        let k = eigenvalues.len();
        if dim == 0 || k == 0 || k > dim {
            return Err(Error::InvalidParameter(format!("basis with k={k}, dim={dim}")));
        }
        if components.len() != k * dim {
            return Err(Error::DimensionMismatch { expected: k * dim, actual: components.len() });
        }
        Ok(Self { mean, components, eigenvalues, k, dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f32] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// A basis keeping only the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidParameter(format!("cannot truncate k={} to {k}", self.k)));
        }
        Self::from_parts(self.mean.clone(), self.components[..k * self.dim].to_vec(), self.eigenvalues[..k].to_vec())
    }

    /// `components · (d − mean)`. No renormalization is applied.
    pub fn project(&self, d: &Descriptor) -> Result<Descriptor> {
        if d.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: d.dim() });
        }
        let centred: Vec<f32> = d.values().iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let out = self
            .components
            .chunks_exact(self.dim)
            .map(|row| {
                let acc: f64 = row.iter().zip(&centred).map(|(&a, &b)| a as f64 * b as f64).sum();
                acc as f32
            })
            .collect();
        Ok(Descriptor(out))
    }

    pub fn project_all(&self, ds: &[Descriptor]) -> Result<Vec<Descriptor>> {
        ds.iter().map(|d| self.project(d)).collect()
    }

    /// Maps a projected descriptor back into the full space.
    pub fn unproject(&self, p: &Descriptor) -> Result<Descriptor> {
        if p.dim() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, actual: p.dim() });
        }
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (row, &c) in self.components.chunks_exact(self.dim).zip(p.values()) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += r as f64 * c as f64;
            }
        }
        Ok(Descriptor(out.into_iter().map(|v| v as f32).collect()))
    }
}

/// Fits the top-`k` principal components of `descriptors`.
///
/// Components are ordered by descending eigenvalue; each is signed so that
/// its largest-magnitude entry is positive.
pub fn fit_basis(descriptors: &[Descriptor], k: usize) -> Result<DescriptorBasis> {
    let dim =
        descriptors.first().map(Descriptor::dim).ok_or(Error::InsufficientSamples { needed: k.max(1), got: 0 })?;
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!("k must be in 1..={dim}, got {k}")));
    }
    if descriptors.len() < k {
        return Err(Error::InsufficientSamples { needed: k, got: descriptors.len() });
    }
    if let Some(bad) = descriptors.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: bad.dim() });
    }
    let n = descriptors.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for d in descriptors {
        for (m, &v) in mean.iter_mut().zip(d.values()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut scatter = DMatrix::<f64>::zeros(dim, dim);
    let mut centred = vec![0.0f64; dim];
    for d in descriptors {
        for ((c, &v), &m) in centred.iter_mut().zip(d.values()).zip(&mean) {
            *c = v as f64 - m;
        }
        for i in 0..dim {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..dim {
                scatter[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = scatter[(i, j)] / n;
            scatter[(i, j)] = v;
            scatter[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..dim).collect();
    // descending eigenvalue, index as a tie-break for determinism
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k * dim);
    let mut eigenvalues = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let col = eig.eigenvectors.column(c);
        let pivot = col.iter().cloned().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|&v| (sign * v) as f32));
        eigenvalues.push(eig.eigenvalues[c].max(0.0));
    }
    DescriptorBasis::from_parts(mean.into_iter().map(|m| m as f32).collect(), components, eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptors(n: usize, dim: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Descriptor((0..dim).map(|_| rng.random::<f32>()).collect())).collect()
    }

    #[test]
    fn rows_are_orthonormal_and_sorted() {
        let ds = random_descriptors(400, 128, 1);
        let b = fit_basis(&ds, 16).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = b.component(i).iter().zip(b.component(j)).map(|(&x, &y)| x as f64 * y as f64).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6, "{i},{j}: {dot}");
            }
            let row = b.component(i);
            let pivot = row.iter().cloned().fold(0.0f32, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        assert!(b.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_basis_reconstructs_and_preserves_distances() {
        let ds = random_descriptors(300, 128, 2);
        let b = fit_basis(&ds, 128).unwrap();
        for d in ds.iter().take(20) {
            let back = b.unproject(&b.project(d).unwrap()).unwrap();
            for (x, y) in back.values().iter().zip(d.values()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        for pair in ds.windows(2).take(20) {
            let full = pair[0].distance_squared(&pair[1]).sqrt();
            let proj = b.project(&pair[0]).unwrap().distance_squared(&b.project(&pair[1]).unwrap()).sqrt();
            assert!((full - proj).abs() < 1e-5);
        }
    }

    #[test]
    fn affine_subspace_is_recovered_exactly() {
        // points = c + sum of three coefficients times fixed directions
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 128;
        let centre: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let ds: Vec<Descriptor> = (0..200)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                Descriptor(
                    (0..dim).map(|i| (centre[i] + (0..3).map(|j| a[j] * dirs[j][i]).sum::<f64>()) as f32).collect(),
                )
            })
            .collect();
        let b = fit_basis(&ds, 3).unwrap();
        for d in &ds {
            let back = b.unproject(&b.project(d).unwrap()).unwrap();
            let err: f64 =
                back.values().iter().zip(d.values()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt();
            // only f32 storage rounding remains
            assert!(err < 1e-5, "{err}");
        }
        assert!(b.eigenvalues()[2] > 1e-3);
    }

    #[test]
    fn mean_projects_to_zero() {
        let ds = random_descriptors(100, 128, 4);
        let b = fit_basis(&ds, 8).unwrap();
        let p = b.project(&Descriptor(b.mean().to_vec())).unwrap();
        assert_eq!(p.dim(), 8);
        assert!(p.values().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn errors() {
        let ds = random_descriptors(5, 128, 5);
        assert!(matches!(fit_basis(&ds, 8), Err(Error::InsufficientSamples { needed: 8, got: 5 })));
        assert!(fit_basis(&ds, 0).is_err());
        assert!(fit_basis(&ds, 129).is_err());
        let b = fit_basis(&ds, 4).unwrap();
        assert!(matches!(b.project(&Descriptor(vec![0.0; 64])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fit_is_deterministic_and_truncation_matches() {
        let ds = random_descriptors(200, 128, 6);
        let a = fit_basis(&ds, 16).unwrap();
        assert_eq!(a, fit_basis(&ds, 16).unwrap());
        let t = a.truncated(8).unwrap();
        assert_eq!(t, fit_basis(&ds, 8).unwrap());
    }
}
