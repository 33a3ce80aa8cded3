//! Direction extraction, Separation Loss, Orthogonality Regularizer and the
//! exact gradient of their weighted sum.
//!
//! With embeddings `z_i`, reference embedding `z0` and group directions
//! `z_g = mean_{i∈g}(z_i − z0)`:
//!
//! ```text
//! L_sep = Σ_{i<j} (|z_i − z_j| − |ỹ_i − ỹ_j|)²
//! L_ort = |Z Zᵀ − I|_F²,  Z = [z_M; z_N; z_P; z_K; z_C; z_Al]
//! ```
//!
//! `∂L_ort/∂Z = 4 (Z Zᵀ − I) Z`. Each direction row feeds back into its group
//! members with weight `1/n_g` and into `z0` with weight −1.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::encoder::{encode, forward_batch, standardize_batch, EncoderParams, Weights, N_COMPONENTS};
use super::TrainConfig;
use crate::dataset::{Dataset, GroupTag};
use crate::error::{Error, Result};
use crate::soil_forward::SensingVector;

/// Average latent shift per component plus the reference embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    /// Rows in canonical component order [M, N, P, K, C, Al].
    pub z_avg: Array2<f64>,
    pub z0: Array1<f64>,
    pub group_counts: [usize; N_COMPONENTS],
}

impl DirectionSet {
    /// 6×6 row Gram matrix `Z Zᵀ`.
    pub fn gram(&self) -> Array2<f64> {
        self.z_avg.dot(&self.z_avg.t())
    }

    /// Largest |off-diagonal| of the Gram matrix.
    pub fn max_off_diagonal(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..N_COMPONENTS {
            for j in 0..N_COMPONENTS {
                if i != j {
                    worst = worst.max(g[[i, j]].abs());
                }
            }
        }
        worst
    }

    /// Largest |cosine| between two different directions.
    pub fn max_cosine(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..N_COMPONENTS {
            for j in 0..N_COMPONENTS {
                if i != j {
                    let denom = (g[[i, i]] * g[[j, j]]).sqrt();
                    if denom > 0.0 {
                        worst = worst.max((g[[i, j]] / denom).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Sample indices of the reference and of each component group.
#[derive(Debug, Clone)]
pub(crate) struct GroupIndex {
    pub reference: usize,
    pub members: [Vec<usize>; N_COMPONENTS],
}

impl GroupIndex {
    pub fn new(ds: &Dataset) -> Result<Self> {
        ds.validate_training_structure()?;
        let reference = ds
            .samples
            .iter()
            .position(|s| s.tag == GroupTag::Ref)
            .expect("validated");
        let mut members: [Vec<usize>; N_COMPONENTS] = Default::default();
        for (i, s) in ds.samples.iter().enumerate() {
            if let Some(c) = s.tag.component() {
                members[c.index()].push(i);
            }
        }
        Ok(GroupIndex { reference, members })
    }

    pub fn counts(&self) -> [usize; N_COMPONENTS] {
        std::array::from_fn(|g| self.members[g].len())
    }
}

/// Standardized inputs, normalized labels and group structure of one dataset.
#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub xhat: Array2<f64>,
    pub labels: Vec<[f64; N_COMPONENTS]>,
    pub groups: GroupIndex,
}

impl Batch {
    pub fn new(params: &EncoderParams, ds: &Dataset) -> Result<Self> {
        let groups = GroupIndex::new(ds)?;
        let inputs: Vec<SensingVector> = ds.samples.iter().map(|s| s.sensing).collect();
        Ok(Batch {
            xhat: standardize_batch(&params.standardization, &inputs)?,
            labels: ds.normalized_labels()?,
            groups,
        })
    }
}

pub(crate) fn directions_from_embeddings(z: ArrayView2<f64>, groups: &GroupIndex) -> DirectionSet {
    let dim = z.ncols();
    let z0 = z.row(groups.reference).to_owned();
    let mut z_avg = Array2::zeros((N_COMPONENTS, dim));
    for (g, members) in groups.members.iter().enumerate() {
        let mut row = z_avg.row_mut(g);
        for &i in members {
            row += &z.row(i);
        }
        row /= members.len() as f64;
        row -= &z0;
    }
    DirectionSet {
        z_avg,
        z0,
        group_counts: groups.counts(),
    }
}

/// Directions from single-sample encodings of the training set.
pub fn compute_directions(params: &EncoderParams, training: &Dataset) -> Result<DirectionSet> {
    let groups = GroupIndex::new(training)?;
    let mut z = Array2::zeros((training.len(), super::encoder::EMBED_DIM));
    for (mut row, s) in z.rows_mut().into_iter().zip(&training.samples) {
        row.assign(&encode(params, &s.sensing)?);
    }
    Ok(directions_from_embeddings(z.view(), &groups))
}

pub fn loss_ort(directions: &DirectionSet) -> f64 {
    let mut g = directions.gram();
    for i in 0..N_COMPONENTS {
        g[[i, i]] -= 1.0;
    }
    g.iter().map(|v| v * v).sum()
}

fn label_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sum over unordered pairs; optionally accumulates ∂L/∂z into `grad`.
fn sep_loss_and_grad(
    z: ArrayView2<f64>,
    labels: &[impl AsRef<[f64]>],
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let n = z.nrows();
    let dim = z.ncols();
    let mut loss = 0.0;
    let mut diff = vec![0.0; dim];
    for i in 0..n {
        for j in i + 1..n {
            let zi = z.row(i);
            let zj = z.row(j);
            let mut d2 = 0.0;
            for k in 0..dim {
                diff[k] = zi[k] - zj[k];
                d2 += diff[k] * diff[k];
            }
            let d = d2.sqrt();
            let target = label_distance(labels[i].as_ref(), labels[j].as_ref());
            let r = d - target;
            loss += r * r;
            if let Some(g) = grad.as_deref_mut() {
                // subgradient 0 at coincident embeddings
                if d > 0.0 {
                    let coef = 2.0 * r / d;
                    for k in 0..dim {
                        g[[i, k]] += coef * diff[k];
                        g[[j, k]] -= coef * diff[k];
                    }
                }
            }
        }
    }
    loss
}

/// Separation loss of embedding rows against label rows.
pub fn loss_sep(embeddings: ArrayView2<f64>, norm_labels: &[impl AsRef<[f64]>]) -> Result<f64> {
    if embeddings.nrows() != norm_labels.len() {
        return Err(Error::Domain(format!(
            "{} embeddings but {} labels",
            embeddings.nrows(),
            norm_labels.len()
        )));
    }
    if embeddings.nrows() < 2 {
        return Err(Error::Domain("separation loss needs at least two samples".into()));
    }
    let dims: Vec<usize> = norm_labels.iter().map(|l| l.as_ref().len()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Domain("labels have inconsistent dimensions".into()));
    }
    Ok(sep_loss_and_grad(embeddings, norm_labels, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub sep: f64,
    pub ort: f64,
    pub total: f64,
}

pub(crate) fn batch_loss(weights: &Weights, batch: &Batch, cfg: &TrainConfig) -> (LossParts, DirectionSet) {
    let fwd = forward_batch(weights, batch.xhat.clone());
    let dirs = directions_from_embeddings(fwd.z.view(), &batch.groups);
    let sep = sep_loss_and_grad(fwd.z.view(), &batch.labels, None);
    let ort = loss_ort(&dirs);
    let parts = LossParts {
        sep,
        ort,
        total: cfg.lambda_sep * sep + cfg.lambda_ort * ort,
    };
    (parts, dirs)
}

pub(crate) fn batch_loss_and_grad(weights: &Weights, batch: &Batch, cfg: &TrainConfig) -> (LossParts, Weights) {
    let fwd = forward_batch(weights, batch.xhat.clone());
    let n = fwd.z.nrows();
    let mut dz = Array2::<f64>::zeros(fwd.z.raw_dim());

    let sep = if cfg.lambda_sep != 0.0 {
        let mut g_sep = Array2::zeros(fwd.z.raw_dim());
        let sep = sep_loss_and_grad(fwd.z.view(), &batch.labels, Some(&mut g_sep));
        dz.scaled_add(cfg.lambda_sep, &g_sep);
        sep
    } else {
        sep_loss_and_grad(fwd.z.view(), &batch.labels, None)
    };

    let dirs = directions_from_embeddings(fwd.z.view(), &batch.groups);
    let ort = loss_ort(&dirs);
    if cfg.lambda_ort != 0.0 {
        let mut residual = dirs.gram();
        for i in 0..N_COMPONENTS {
            residual[[i, i]] -= 1.0;
        }
        let d_dirs = residual.dot(&dirs.z_avg) * (4.0 * cfg.lambda_ort);
        for (g, members) in batch.groups.members.iter().enumerate() {
            let row = d_dirs.row(g);
            let share = 1.0 / members.len() as f64;
            for &i in members {
                dz.row_mut(i).scaled_add(share, &row);
            }
            dz.row_mut(batch.groups.reference).scaled_add(-1.0, &row);
        }
    }
    debug_assert_eq!(dz.nrows(), n);

    let db2 = dz.sum_axis(Axis(0));
    let dw2 = dz.t().dot(&fwd.hidden);
    let mut dh = dz.dot(&weights.w2);
    ndarray::Zip::from(&mut dh)
        .and(&fwd.hidden_pre)
        .for_each(|g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
    let db1 = dh.sum_axis(Axis(0));
    let dw1 = dh.t().dot(&fwd.xhat);

    let parts = LossParts {
        sep,
        ort,
        total: cfg.lambda_sep * sep + cfg.lambda_ort * ort,
    };
    (
        parts,
        Weights {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        },
    )
}

/// `λ_sep·L_sep + λ_ort·L_ort` over the whole dataset.
pub fn compound_loss(params: &EncoderParams, training: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    params.validate()?;
    let batch = Batch::new(params, training)?;
    Ok(batch_loss(&params.weights, &batch, cfg).0.total)
}

pub fn compound_loss_parts(params: &EncoderParams, training: &Dataset, cfg: &TrainConfig) -> Result<LossParts> {
    params.validate()?;
    let batch = Batch::new(params, training)?;
    Ok(batch_loss(&params.weights, &batch, cfg).0)
}

/// Exact gradient of [`compound_loss`] with respect to every weight and bias.
pub fn grad_compound(params: &EncoderParams, training: &Dataset, cfg: &TrainConfig) -> Result<Weights> {
    params.validate()?;
    let batch = Batch::new(params, training)?;
    Ok(batch_loss_and_grad(&params.weights, &batch, cfg).1)
}

/// Unnormalized and normalized projection scores of a displacement onto each direction.
pub(crate) fn projection_scores(displacement: &Array1<f64>, dirs: &DirectionSet) -> ([f64; N_COMPONENTS], [f64; N_COMPONENTS]) {
    let mut dot = [0.0; N_COMPONENTS];
    let mut normalized = [0.0; N_COMPONENTS];
    for g in 0..N_COMPONENTS {
        let d = dirs.z_avg.slice(s![g, ..]);
        dot[g] = displacement.dot(&d);
        normalized[g] = dot[g] / d.dot(&d);
    }
    (dot, normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cl3::encoder::{Standardization, EMBED_DIM};
    use crate::dataset::gen_training_set;
    use crate::soil_forward::NoiseConfig;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirs_from_rows(rows: Array2<f64>) -> DirectionSet {
        DirectionSet {
            z0: Array1::zeros(rows.ncols()),
            z_avg: rows,
            group_counts: [1; 6],
        }
    }

    #[test]
    fn ort_examples() {
        let mut eye = Array2::zeros((6, 10));
        for i in 0..6 {
            eye[[i, i + 2]] = 1.0;
        }
        assert_eq!(loss_ort(&dirs_from_rows(eye)), 0.0);
        let mut same = Array2::zeros((6, 4));
        same.column_mut(1).fill(1.0);
        assert!((loss_ort(&dirs_from_rows(same)) - 30.0).abs() < 1e-12);
        assert_eq!(loss_ort(&dirs_from_rows(Array2::zeros((6, 4)))), 6.0);
    }

    #[test]
    fn sep_examples() {
        let z = array![[0.0, 0.0], [2.0, 0.0]];
        let y = [[0.0], [1.0]];
        assert!((loss_sep(z.view(), &y).unwrap() - 1.0).abs() < 1e-15);
        let z = array![[0.0, 0.0], [0.6, 0.8], [0.0, 2.0]];
        let y = [[0.0, 0.0], [0.6, 0.8], [0.0, 2.0]];
        assert_eq!(loss_sep(z.view(), &y).unwrap(), 0.0);
        assert!(loss_sep(z.view(), &y[..2]).is_err());
        assert!(loss_sep(z.slice(s![..1, ..]), &y[..1]).is_err());
    }

    #[test]
    fn zero_params_give_zero_directions() {
        let ds = gen_training_set(&NoiseConfig::noiseless(0));
        let params = EncoderParams {
            weights: Weights::zeros(),
            standardization: Standardization::fit(ds.samples.iter().map(|s| &s.sensing)),
        };
        let dirs = compute_directions(&params, &ds).unwrap();
        assert!(dirs.z_avg.iter().all(|v| *v == 0.0));
        assert_eq!(dirs.group_counts, [5, 9, 9, 9, 5, 5]);
    }

    #[test]
    fn single_member_group_direction() {
        let groups = GroupIndex {
            reference: 0,
            members: [vec![1], vec![2], vec![3], vec![4], vec![5], vec![6]],
        };
        let mut z = Array2::zeros((7, 3));
        z.row_mut(0).assign(&array![1.0, 1.0, 1.0]);
        z.row_mut(1).assign(&array![1.0, 3.0, 1.0]);
        let d = directions_from_embeddings(z.view(), &groups);
        assert_eq!(d.z_avg.row(0), array![0.0, 2.0, 0.0]);
        assert_eq!(d.z0, array![1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_group_is_structural_error() {
        let mut ds = gen_training_set(&NoiseConfig::noiseless(0));
        ds.samples.retain(|s| s.tag != GroupTag::C);
        let params = EncoderParams { weights: Weights::zeros(), standardization: Standardization::default() };
        assert!(matches!(compute_directions(&params, &ds), Err(Error::Structure(_))));
    }

    #[test]
    fn compound_is_weighted_sum() {
        let ds = gen_training_set(&NoiseConfig::noiseless(0));
        let params = EncoderParams {
            weights: Weights::random(4, 0.5),
            standardization: Standardization::fit(ds.samples.iter().map(|s| &s.sensing)),
        };
        let parts = compound_loss_parts(&params, &ds, &TrainConfig::default()).unwrap();
        let total = compound_loss(&params, &ds, &TrainConfig::default()).unwrap();
        assert!((total - (0.82 * parts.sep + 0.18 * parts.ort)).abs() < 1e-12);
        let no_sep = TrainConfig { lambda_sep: 0.0, ..TrainConfig::default() };
        assert!((compound_loss(&params, &ds, &no_sep).unwrap() - 0.18 * parts.ort).abs() < 1e-12);
        let no_ort = TrainConfig { lambda_ort: 0.0, ..TrainConfig::default() };
        assert!((compound_loss(&params, &ds, &no_ort).unwrap() - 0.82 * parts.sep).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_linear_in_lambda() {
        let ds = gen_training_set(&NoiseConfig::noiseless(0));
        let params = EncoderParams {
            weights: Weights::random(8, 0.5),
            standardization: Standardization::fit(ds.samples.iter().map(|s| &s.sensing)),
        };
        let a = TrainConfig { lambda_sep: 0.0, lambda_ort: 0.18, ..TrainConfig::default() };
        let b = TrainConfig { lambda_sep: 0.0, lambda_ort: 0.36, ..TrainConfig::default() };
        let ga = grad_compound(&params, &ds, &a).unwrap();
        let mut gb = grad_compound(&params, &ds, &b).unwrap();
        gb.scale(0.5);
        let mut worst = 0.0f64;
        let mut ga2 = ga.clone();
        ga2.zip_for_each(&gb, |x, y| worst = worst.max((*x - y).abs()));
        assert!(worst < 1e-12);
    }

    #[test]
    fn zero_loss_configuration_has_zero_gradient() {
        // every sample identical in label and input: all pair terms are 0 - 0
        let mut ds = gen_training_set(&NoiseConfig::noiseless(0));
        let reference = *ds.reference().unwrap();
        for s in ds.samples.iter_mut() {
            s.composition = reference.composition;
            s.sensing = reference.sensing;
        }
        let params = EncoderParams { weights: Weights::random(2, 1.0), standardization: Standardization::default() };
        let cfg = TrainConfig { lambda_ort: 0.0, ..TrainConfig::default() };
        assert_eq!(compound_loss(&params, &ds, &cfg).unwrap(), 0.0);
        let g = grad_compound(&params, &ds, &cfg).unwrap();
        assert!(g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2).all(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sep_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 7;
            let z = Array2::from_shape_simple_fn((n, 5), || rand::Rng::random_range(&mut rng, -1.0..1.0));
            let y: Vec<[f64; 6]> = (0..n).map(|_| std::array::from_fn(|_| rand::Rng::random::<f64>(&mut rng))).collect();
            let base = loss_sep(z.view(), &y).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let zp = z.select(Axis(0), &perm);
            let yp: Vec<[f64; 6]> = perm.iter().map(|&i| y[i]).collect();
            let permuted = loss_sep(zp.view(), &yp).unwrap();
            prop_assert!((base - permuted).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn orthonormal_directions_have_zero_ort(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_simple_fn((EMBED_DIM.min(16), 6), || rand::Rng::random_range(&mut rng, -1.0..1.0));
            let q = nalgebra::DMatrix::from_row_slice(a.nrows(), 6, a.as_slice().unwrap()).qr().q();
            let rows = Array2::from_shape_fn((6, q.nrows()), |(i, j)| q[(j, i)]);
            prop_assert!(loss_ort(&dirs_from_rows(rows)) < 1e-24);
        }

        #[test]
        fn projection_recovers_coefficients(seed in any::<u64>(), c in prop::array::uniform6(-3.0f64..3.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_simple_fn((16, 6), || rand::Rng::random_range(&mut rng, -1.0..1.0));
            let q = nalgebra::DMatrix::from_row_slice(16, 6, a.as_slice().unwrap()).qr().q();
            let dirs = dirs_from_rows(Array2::from_shape_fn((6, 16), |(i, j)| q[(j, i)]));
            let disp = (0..6).fold(Array1::zeros(16), |acc, g| acc + c[g] * &dirs.z_avg.row(g));
            let (dot, normalized) = projection_scores(&disp, &dirs);
            for g in 0..6 {
                prop_assert!((normalized[g] - c[g]).abs() < 1e-12);
                prop_assert!((dot[g] - c[g]).abs() < 1e-12);
            }
        }
    }
}
