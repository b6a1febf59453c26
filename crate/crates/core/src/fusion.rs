//! Memory fusion of backbone features with encoder-layer outputs.
//!
//! Each fusion site concatenates its sources along the feature dimension,
//! projects the result back to `dim` with a bias-free linear map and applies
//! a per-token standardization followed by a learned scale and bias.
//!
//! Site layout for `L` encoder layers:
//!
//! | kind     | sites | sources of site ℓ            |
//! |----------|-------|------------------------------|
//! | `Simple` | 1     | backbone, layer L            |
//! | `ULike`  | L     | backbone, layer ℓ            |
//! | `Dense`  | L     | backbone, layers 1..=ℓ       |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Simple,
    ULike,
    Dense,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Simple, FusionKind::ULike, FusionKind::Dense];

    pub fn site_count(self, layers: usize) -> usize {
        match self {
            FusionKind::Simple => 1,
            FusionKind::ULike | FusionKind::Dense => layers,
        }
    }

    /// Encoder layers (1-based) fused at `site` (0-based), after the backbone.
    pub fn site_layers(self, site: usize, layers: usize) -> Vec<usize> {
        match self {
            FusionKind::Simple => vec![layers],
            FusionKind::ULike => vec![site + 1],
            FusionKind::Dense => (1..=site + 1).collect(),
        }
    }

    /// Concatenated width at `site` before projection.
    pub fn site_width(self, site: usize, layers: usize, dim: usize) -> usize {
        (1 + self.site_layers(site, layers).len()) * dim
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(FusionKind::Simple),
            "ulike" | "u-like" | "u_like" => Ok(FusionKind::ULike),
            "dense" => Ok(FusionKind::Dense),
            other => Err(Error::UnknownVariant(other.to_owned())),
        }
    }
}

/// `tokens × dim` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    tokens: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(tokens: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if tokens == 0 || dim == 0 {
            return Err(Error::Shape(format!("empty feature map {tokens}x{dim}")));
        }
        if values.len() != tokens * dim {
            return Err(Error::Shape(format!(
                "{} values for a {tokens}x{dim} feature map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument {
                arg: "values",
                reason: "non-finite feature".into(),
            });
        }
        Ok(Self { tokens, dim, values })
    }

    pub fn constant(tokens: usize, dim: usize, value: f64) -> Result<Self> {
        Self::new(tokens, dim, vec![value; tokens * dim])
    }

    pub fn random(tokens: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..tokens * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(tokens, dim, values)
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Parameters of one fusion site.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    in_width: usize,
    dim: usize,
    /// `dim × in_width`, row-major
    projection: Vec<f64>,
    norm_scale: Vec<f64>,
    norm_bias: Vec<f64>,
}

impl FusionParams {
    pub fn new(
        in_width: usize,
        dim: usize,
        projection: Vec<f64>,
        norm_scale: Vec<f64>,
        norm_bias: Vec<f64>,
    ) -> Result<Self> {
        if projection.len() != in_width * dim {
            return Err(Error::Shape(format!(
                "projection has {} entries, expected {dim}x{in_width}",
                projection.len()
            )));
        }
        if norm_scale.len() != dim || norm_bias.len() != dim {
            return Err(Error::Shape("norm parameters must have length dim".into()));
        }
        Ok(Self {
            in_width,
            dim,
            projection,
            norm_scale,
            norm_bias,
        })
    }

    /// Uniform `[-k, k]` projection with `k = in_width^-1/2`, unit scale and
    /// zero bias.
    pub fn init(in_width: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let k = (in_width as f64).powf(-0.5);
        let projection = (0..in_width * dim).map(|_| rng.random_range(-k..=k)).collect();
        Self {
            in_width,
            dim,
            projection,
            norm_scale: vec![1.0; dim],
            norm_bias: vec![0.0; dim],
        }
    }

    /// Projection made of `blocks` stacked identity matrices.
    pub fn identity_blocks(blocks: usize, dim: usize) -> Self {
        let in_width = blocks * dim;
        let mut projection = vec![0.0; in_width * dim];
        for r in 0..dim {
            for b in 0..blocks {
                projection[r * in_width + b * dim + r] = 1.0;
            }
        }
        Self {
            in_width,
            dim,
            projection,
            norm_scale: vec![1.0; dim],
            norm_bias: vec![0.0; dim],
        }
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn param_count(&self) -> usize {
        self.projection.len() + self.norm_scale.len() + self.norm_bias.len()
    }

    pub fn with_norm(mut self, scale: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if scale.len() != self.dim || bias.len() != self.dim {
            return Err(Error::Shape("norm parameters must have length dim".into()));
        }
        self.norm_scale = scale;
        self.norm_bias = bias;
        Ok(self)
    }
}

/// Seeded parameters for every site of a topology.
pub fn init_params(kind: FusionKind, layers: usize, dim: usize, seed: u64) -> Vec<FusionParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..kind.site_count(layers))
        .map(|site| FusionParams::init(kind.site_width(site, layers, dim), dim, &mut rng))
        .collect()
}

/// Rows with variance at or below this (relative to the squared mean) are
/// treated as constant and standardize to zero.
const CONSTANT_ROW_TOL: f64 = 1e-24;

fn standardize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= CONSTANT_ROW_TOL * mean.mul_add(mean, 1.0) {
        row.fill(0.0);
        return;
    }
    let inv = var.sqrt().recip();
    for x in row.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

fn fuse_site(sources: &[&FeatureMap], params: &FusionParams) -> Result<FeatureMap> {
    let (tokens, dim) = (sources[0].tokens, sources[0].dim);
    let width = sources.len() * dim;
    if params.in_width != width || params.dim != dim {
        return Err(Error::Shape(format!(
            "projection expects {}->{}, site concatenates {width}->{dim}",
            params.in_width, params.dim
        )));
    }
    let mut out = Vec::with_capacity(tokens * dim);
    let mut concat = vec![0.0; width];
    let mut projected = vec![0.0; dim];
    for t in 0..tokens {
        for (s, src) in sources.iter().enumerate() {
            concat[s * dim..(s + 1) * dim].copy_from_slice(src.row(t));
        }
        for (r, y) in projected.iter_mut().enumerate() {
            let w = &params.projection[r * width..(r + 1) * width];
            *y = w.iter().zip(&concat).map(|(a, b)| a * b).sum();
        }
        standardize(&mut projected);
        out.extend(
            projected
                .iter()
                .zip(params.norm_scale.iter().zip(&params.norm_bias))
                .map(|(x, (g, b))| x * g + b),
        );
    }
    FeatureMap::new(tokens, dim, out)
}

/// Fuses the backbone with encoder outputs; one output map per site.
pub fn fuse(
    kind: FusionKind,
    backbone: &FeatureMap,
    encoder_layers: &[FeatureMap],
    params: &[FusionParams],
) -> Result<Vec<FeatureMap>> {
    let layers = encoder_layers.len();
    if layers == 0 {
        return Err(Error::InvalidArgument {
            arg: "encoder_layers",
            reason: "at least one encoder layer required".into(),
        });
    }
    for (k, layer) in encoder_layers.iter().enumerate() {
        if layer.tokens != backbone.tokens || layer.dim != backbone.dim {
            return Err(Error::Shape(format!(
                "encoder layer {} is {}x{}, backbone is {}x{}",
                k + 1,
                layer.tokens,
                layer.dim,
                backbone.tokens,
                backbone.dim
            )));
        }
    }
    let sites = kind.site_count(layers);
    if params.len() != sites {
        return Err(Error::Shape(format!(
            "{} parameter sets for {sites} fusion sites",
            params.len()
        )));
    }

    (0..sites)
        .map(|site| {
            let mut sources = vec![backbone];
            sources.extend(
                kind.site_layers(site, layers)
                    .into_iter()
                    .map(|l| &encoder_layers[l - 1]),
            );
            fuse_site(&sources, &params[site])
        })
        .collect()
}

/// Scalar parameters added by a topology: projections plus norm scale/bias.
pub fn fusion_param_count(kind: FusionKind, layers: usize, dim: usize) -> usize {
    (0..kind.site_count(layers))
        .map(|site| kind.site_width(site, layers, dim) * dim + 2 * dim)
        .sum()
}
