//! Multilayer orchestration.
//!
//! Layer 1 factors the cube `X ≈ A₁·S₁`; layer `l ≥ 2` refactors the
//! previous activations `S_{l−1} ≈ A_l·S_l` with a square `P×P` mixing
//! matrix. The result is `A = A₁·A₂·…·A_L` and `S = S_L`. Every layer runs
//! its own annealing schedule from `t = 1`, and all `L` layers always run.

use ndarray::{Array2, ArrayView2};

use crate::data::{AbundanceMatrix, SignatureMatrix, SpectralCube};
use crate::error::{dim_err, Error, Result};
use crate::init::{random_init, vca_endmembers, InitMethod};
use crate::nmf::{run_layer, LayerConfig, LayerResult};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MlnmfConfig {
    /// Number of endmembers.
    pub p: usize,
    /// Number of layers.
    pub layers: usize,
    pub layer: LayerConfig,
    /// Initialization of layer 1; deeper layers always start at random.
    pub init: InitMethod,
    pub seed: u64,
}

impl MlnmfConfig {
    /// Defaults: L = 10, T_max = 400, α0 = 0.1, τ = 25, δ = 25, ε = 1e-4,
    /// VCA initialization.
    pub fn new(p: usize) -> Self {
        Self {
            p,
            layers: 10,
            layer: LayerConfig::default(),
            init: InitMethod::Vca,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::Config("p must be >= 1".into()));
        }
        if self.layers < 1 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        self.layer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixResult {
    /// Composed signatures `A₁·…·A_L`, bands × P.
    pub a: Array2<f64>,
    /// Final activations `S_L`, P × pixels.
    pub s: Array2<f64>,
    pub per_layer: Vec<LayerResult>,
    pub config_echo: MlnmfConfig,
    /// Pixels VCA picked for layer 1, when VCA was used.
    pub vca_indices: Option<Vec<usize>>,
}

impl UnmixResult {
    /// Fails if some composed signature collapsed to zero.
    pub fn signatures(&self) -> Result<SignatureMatrix> {
        SignatureMatrix::new(self.a.clone())
    }

    pub fn abundances(&self) -> Result<AbundanceMatrix> {
        AbundanceMatrix::new(self.s.clone())
    }
}

/// Left-to-right product of the layer mixing matrices.
pub fn compose_signatures(layer_as: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let (first, rest) = match layer_as.split_first() {
        Some(split) => split,
        None => return Err(Error::Config("no layer matrices to compose".into())),
    };
    let mut acc = first.to_owned();
    for (k, m) in rest.iter().enumerate() {
        if acc.ncols() != m.nrows() {
            return dim_err(format!(
                "layer {} matrix is {:?} but the running product is {:?}",
                k + 2,
                m.dim(),
                acc.dim()
            ));
        }
        acc = acc.dot(m);
    }
    Ok(acc)
}

/// Runs the full multilayer factorization of `cube`.
pub fn run_mlnmf(cube: &SpectralCube, cfg: &MlnmfConfig) -> Result<UnmixResult> {
    cfg.validate()?;
    let x = cube.data();
    let (b, n) = x.dim();
    if cfg.p > b.min(n) {
        return Err(Error::Config(format!(
            "p = {} exceeds min(bands, pixels) = {}",
            cfg.p,
            b.min(n)
        )));
    }

    let first = match cfg.init {
        InitMethod::Vca => vca_endmembers(x.view(), cfg.p, seed::split(cfg.seed, &[0]))?,
        InitMethod::Random => random_init(b, cfg.p, n, seed::split(cfg.seed, &[0]))?,
    };
    let vca_indices = first.selected_pixel_indices.clone();

    let mut per_layer: Vec<LayerResult> = Vec::with_capacity(cfg.layers);
    let mut a0 = first.a0;
    let mut s0 = first.s0;
    for layer in 0..cfg.layers {
        if layer > 0 {
            let mut rng = seed::rng_stream(seed::split(cfg.seed, &[1]), layer as u64);
            a0 = crate::init::uniform_open_closed(&mut rng, cfg.p, cfg.p);
            s0 = crate::init::uniform_open_closed(&mut rng, cfg.p, n);
        }
        let input = match per_layer.last() {
            Some(prev) => prev.s.view(),
            None => x.view(),
        };
        let result = run_layer(input, a0.clone(), s0.clone(), &cfg.layer).map_err(|e| match e {
            Error::Divergence { iteration, .. } => Error::Divergence {
                iteration,
                layer: Some(layer + 1),
            },
            other => other,
        })?;
        per_layer.push(result);
    }

    let views: Vec<ArrayView2<f64>> = per_layer.iter().map(|l| l.a.view()).collect();
    let a = compose_signatures(&views)?;
    let s = per_layer.last().expect("layers >= 1").s.clone();
    Ok(UnmixResult {
        a,
        s,
        per_layer,
        config_echo: cfg.clone(),
        vca_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
    }

    fn naive_product(ms: &[Array2<f64>]) -> Array2<f64> {
        let mut acc = ms[0].clone();
        for m in &ms[1..] {
            let mut out = Array2::zeros((acc.nrows(), m.ncols()));
            for i in 0..acc.nrows() {
                for j in 0..m.ncols() {
                    for k in 0..acc.ncols() {
                        out[[i, j]] += acc[[i, k]] * m[[k, j]];
                    }
                }
            }
            acc = out;
        }
        acc
    }

    #[test]
    fn compose_examples() {
        let a = random_matrix(5, 3, 1);
        assert_eq!(compose_signatures(&[a.view()]).unwrap(), a);
        let eye = Array2::<f64>::eye(3);
        assert_eq!(compose_signatures(&[a.view(), eye.view()]).unwrap(), a);

        let ms = [random_matrix(5, 3, 2), random_matrix(3, 3, 3), random_matrix(3, 3, 4)];
        let views: Vec<_> = ms.iter().map(|m| m.view()).collect();
        let got = compose_signatures(&views).unwrap();
        let want = naive_product(&ms);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
        assert!(got.iter().all(|&v| v >= 0.0));

        assert!(compose_signatures(&[]).is_err());
        let bad = array![[1.0, 2.0]];
        assert!(matches!(
            compose_signatures(&[a.view(), bad.view()]),
            Err(Error::Dimension(_))
        ));
    }

    fn small_cube() -> SpectralCube {
        let a = random_matrix(12, 3, 7) + 0.05;
        let mut s = random_matrix(3, 40, 8);
        for mut c in s.columns_mut() {
            let t = c.sum();
            c /= t;
        }
        SpectralCube::new(a.dot(&s)).unwrap()
    }

    fn quick_cfg(layers: usize) -> MlnmfConfig {
        let mut cfg = MlnmfConfig::new(3);
        cfg.layers = layers;
        cfg.layer.t_max = 60;
        cfg.seed = 42;
        cfg
    }

    #[test]
    fn single_layer_is_identity_composition() {
        let r = run_mlnmf(&small_cube(), &quick_cfg(1)).unwrap();
        assert_eq!(r.per_layer.len(), 1);
        assert_eq!(r.a, r.per_layer[0].a);
        assert_eq!(r.s, r.per_layer[0].s);
    }

    #[test]
    fn shapes_chain_through_layers() {
        let cube = small_cube();
        for layers in [1, 2, 4] {
            let r = run_mlnmf(&cube, &quick_cfg(layers)).unwrap();
            assert_eq!(r.a.dim(), (12, 3));
            assert_eq!(r.s.dim(), (3, 40));
            assert_eq!(r.per_layer.len(), layers);
            assert_eq!(r.per_layer[0].a.dim(), (12, 3));
            for l in &r.per_layer[1..] {
                assert_eq!(l.a.dim(), (3, 3));
            }
            for l in &r.per_layer {
                assert_eq!(l.s.dim(), (3, 40));
            }
            assert!(r.a.iter().all(|&v| v >= 0.0));
            let views: Vec<_> = r.per_layer.iter().map(|l| l.a.view()).collect();
            let direct = naive_product(&views.iter().map(|v| v.to_owned()).collect::<Vec<_>>());
            for (g, w) in r.a.iter().zip(direct.iter()) {
                assert!((g - w).abs() <= 1e-10 * w.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let cube = small_cube();
        let r1 = run_mlnmf(&cube, &quick_cfg(3)).unwrap();
        let r2 = run_mlnmf(&cube, &quick_cfg(3)).unwrap();
        assert_eq!(r1, r2);
        let mut other = quick_cfg(3);
        other.seed = 43;
        assert_ne!(run_mlnmf(&cube, &other).unwrap().per_layer[1].a, r1.per_layer[1].a);
    }

    #[test]
    fn random_init_mode_runs() {
        let mut cfg = quick_cfg(2);
        cfg.init = InitMethod::Random;
        let r = run_mlnmf(&small_cube(), &cfg).unwrap();
        assert!(r.vca_indices.is_none());
        assert!(r.s.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn config_errors() {
        let cube = small_cube();
        let mut cfg = quick_cfg(1);
        cfg.p = 50;
        assert!(matches!(run_mlnmf(&cube, &cfg), Err(Error::Config(_))));
        cfg.p = 3;
        cfg.layers = 0;
        assert!(run_mlnmf(&cube, &cfg).is_err());
    }
}
