//! Ambiguity samples synthesized across singular transport boundaries.
//!
//! For a boundary between cells `i` and `j`, a source draw `z` is weighted
//! against the two cell mass centres by inverse distance, and the smoothed
//! transport `λ_i T(ĉ_i) + λ_j T(ĉ_j)` places the latent sample on the segment
//! `[y_i, y_j]`. The codec then decodes it to the input space.

use serde::{Deserialize, Serialize};

use crate::base_measure::BaseMeasure;
use crate::cloud::{dist, norm, PointCloud};
use crate::codec::Codec;
use crate::error::{check_dim, Error, Result};
use crate::io::PointTable;
use crate::rng::{unit_f64, SeededRng};
use crate::sdot::{assign_one, transport_point, CellStats, PotentialOffsets};
use crate::singularity::{BoundaryRecord, SingularSet};

pub const DEFAULT_GUARD: f64 = 1e-9;
pub const REJECTION_CAP: usize = 10_000;
/// Half-width of the automatic slab, as a multiple of `‖a‖`.
pub const AUTO_SLAB_FACTOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSample {
    pub i: usize,
    pub j: usize,
    pub z: Vec<f64>,
    pub lambda_i: f64,
    pub lambda_j: f64,
    pub y_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
}

/// Where source draws may fall relative to the boundary hyperplane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slab {
    /// Anywhere in the support.
    Off,
    /// `|<a, z> + b| <= 0.05 ‖a‖` and `z` assigned to `i` or `j`.
    Auto,
    /// `|<a, z> + b| <= delta` and `z` assigned to `i` or `j`.
    Fixed(f64),
}

impl Slab {
    fn delta(self, boundary: &BoundaryRecord) -> Option<f64> {
        match self {
            Slab::Off => None,
            Slab::Auto => Some(AUTO_SLAB_FACTOR * norm(&boundary.a)),
            Slab::Fixed(d) => Some(d),
        }
    }
}

impl std::str::FromStr for Slab {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Slab::Auto),
            "off" => Ok(Slab::Off),
            v => match v.parse::<f64>() {
                Ok(d) if d > 0.0 && d.is_finite() => Ok(Slab::Fixed(d)),
                _ => Err(Error::Config(format!("slab must be auto, off or a positive number, got {v:?}"))),
            },
        }
    }
}

impl std::fmt::Display for Slab {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Slab::Off => f.write_str("off"),
            Slab::Auto => f.write_str("auto"),
            Slab::Fixed(d) => write!(f, "{d}"),
        }
    }
}

impl Serialize for Slab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Slab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Num(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            Raw::Num(v) => v.to_string().parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Inverse-distance weights of `z` against two centroids, distances floored
/// at `guard`.
pub fn interpolation_weights(z: &[f64], c_i: &[f64], c_j: &[f64], guard: f64) -> Result<(f64, f64)> {
    check_dim(c_i.len(), z.len())?;
    check_dim(c_j.len(), z.len())?;
    if c_i == c_j {
        return Err(Error::Synthesis("degenerate centroids: c_i == c_j".into()));
    }
    let inv_i = 1.0 / dist(z, c_i).max(guard);
    let inv_j = 1.0 / dist(z, c_j).max(guard);
    let lambda_i = inv_i / (inv_i + inv_j);
    Ok((lambda_i, 1.0 - lambda_i))
}

/// `λ_i T(ĉ_i) + λ_j T(ĉ_j)`. Fails if either centroid is transported
/// anywhere but its own target, which means the cell statistics do not belong
/// to these offsets.
pub fn smoothed_transport(
    cloud: &PointCloud,
    offsets: &PotentialOffsets,
    centroids: (&[f64], &[f64]),
    boundary: &BoundaryRecord,
    weights: (f64, f64),
) -> Result<Vec<f64>> {
    let (li, lj) = weights;
    if !(0.0..=1.0).contains(&li) || !(0.0..=1.0).contains(&lj) || li + lj != 1.0 {
        return Err(Error::Synthesis(format!("invalid interpolation weights ({li}, {lj})")));
    }
    let ti = transport_point(cloud, offsets, centroids.0)?;
    let tj = transport_point(cloud, offsets, centroids.1)?;
    for (t, k) in [(&ti, boundary.i), (&tj, boundary.j)] {
        if t.as_slice() != cloud.point(k) {
            return Err(Error::Synthesis(format!(
                "centroid of cell {k} is transported outside its cell (boundary {}-{})",
                boundary.i, boundary.j
            )));
        }
    }
    Ok(ti.iter().zip(&tj).map(|(a, b)| li * a + lj * b).collect())
}

/// Settings for [`generate_otis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtisParams {
    pub per_boundary: usize,
    pub slab: Slab,
    pub guard: f64,
    /// Source draws allowed per accepted sample when the slab filter is on.
    pub max_tries: usize,
}

impl Default for OtisParams {
    fn default() -> Self {
        Self {
            per_boundary: 32,
            slab: Slab::Auto,
            guard: DEFAULT_GUARD,
            max_tries: REJECTION_CAP,
        }
    }
}

/// Random stream of boundary `(i, j)`; independent of processing order.
pub fn boundary_rng(rng: &SeededRng, i: usize, j: usize) -> SeededRng {
    rng.derive(i as u64).derive(j as u64)
}

/// Synthesizes `per_boundary` samples for each boundary of `singular`, in
/// the set's order.
#[allow(clippy::too_many_arguments)]
pub fn generate_otis(
    cloud: &PointCloud,
    offsets: &PotentialOffsets,
    singular: &SingularSet,
    stats: &CellStats,
    codec: &Codec,
    measure: &BaseMeasure,
    rng: &SeededRng,
    params: &OtisParams,
) -> Result<Vec<SynthesisSample>> {
    generate_for_boundaries(cloud, offsets, &singular.records, stats, codec, measure, rng, params)
}

/// [`generate_otis`] over an explicit boundary list (used for random-boundary
/// baselines).
#[allow(clippy::too_many_arguments)]
pub fn generate_for_boundaries(
    cloud: &PointCloud,
    offsets: &PotentialOffsets,
    boundaries: &[BoundaryRecord],
    stats: &CellStats,
    codec: &Codec,
    measure: &BaseMeasure,
    rng: &SeededRng,
    params: &OtisParams,
) -> Result<Vec<SynthesisSample>> {
    check_dim(cloud.dim(), measure.dim())?;
    if stats.len() != cloud.len() {
        return Err(Error::Synthesis(format!(
            "cell stats cover {} cells, cloud has {}",
            stats.len(),
            cloud.len()
        )));
    }
    if params.per_boundary == 0 || params.max_tries == 0 {
        return Err(Error::Config("per-boundary count and retry cap must be >= 1".into()));
    }
    let d = cloud.dim();
    let h = offsets.as_slice();
    let mut out = Vec::with_capacity(boundaries.len() * params.per_boundary);
    for b in boundaries {
        let centroid = |k: usize| {
            stats
                .centroid(k)
                .ok_or_else(|| Error::Synthesis(format!("cell {k} is empty; boundary {}-{} has no centroid", b.i, b.j)))
        };
        let (ci, cj) = (centroid(b.i)?, centroid(b.j)?);
        let delta = params.slab.delta(b);
        let mut g = boundary_rng(rng, b.i, b.j).generator();
        let mut z = vec![0.0; d];
        for _ in 0..params.per_boundary {
            let mut tries = 0;
            loop {
                if tries == params.max_tries {
                    return Err(Error::Synthesis(format!(
                        "boundary {}-{}: no source draw within the slab after {} tries",
                        b.i, b.j, params.max_tries
                    )));
                }
                tries += 1;
                measure.draw_one(&mut g, &mut z);
                let Some(delta) = delta else { break };
                if b.gap(&z).abs() <= delta {
                    let cell = assign_one(cloud, h, &z).cell;
                    if cell == b.i || cell == b.j {
                        break;
                    }
                }
            }
            let (li, lj) = interpolation_weights(&z, ci, cj, params.guard)?;
            let y_hat = smoothed_transport(cloud, offsets, (ci, cj), b, (li, lj))?;
            out.push(SynthesisSample {
                i: b.i,
                j: b.j,
                z: z.clone(),
                lambda_i: li,
                lambda_j: lj,
                y_hat,
                x_hat: Vec::new(),
            });
        }
    }
    let latents: Vec<Vec<f64>> = out.iter().map(|s| s.y_hat.clone()).collect();
    for (s, x) in out.iter_mut().zip(codec.decode(&latents)?) {
        s.x_hat = x;
    }
    Ok(out)
}

/// Per-sample provenance written next to the OTIS point file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub i: usize,
    pub j: usize,
    pub lambda_i: f64,
    pub lambda_j: f64,
}

pub fn samples_table(samples: &[SynthesisSample]) -> Result<PointTable> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.x_hat.clone()).collect();
    if rows.is_empty() {
        return Err(Error::Synthesis("no samples to write".into()));
    }
    PointTable::from_rows(&rows)
}

pub fn samples_meta(samples: &[SynthesisSample]) -> Vec<SampleMeta> {
    samples
        .iter()
        .map(|s| SampleMeta {
            i: s.i,
            j: s.j,
            lambda_i: s.lambda_i,
            lambda_j: s.lambda_j,
        })
        .collect()
}

/// `λ u + (1 − λ) v`, exact at `λ ∈ {0, 1}` and where `u` and `v` agree.
pub fn mix(u: &[f64], v: &[f64], lambda: f64) -> Vec<f64> {
    u.iter()
        .zip(v)
        .map(|(&p, &q)| if p == q { p } else { lambda * p + (1.0 - lambda) * q })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpMode {
    /// Mix two latent targets, then decode.
    LatentInterp,
    /// Decode two latent targets, then mix in the input space.
    InputInterp,
}

/// Unguided interpolation samples used as ablation baselines.
pub fn interpolation_baselines(
    cloud: &PointCloud,
    codec: &Codec,
    rng: &SeededRng,
    mode: InterpMode,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    interpolation_baselines_with_lambda(cloud, codec, rng, mode, count, None)
}

/// [`interpolation_baselines`] with the mixing weight optionally pinned.
///
/// Each sample consumes three draws in order: index `a`, index `b != a`, and
/// `λ` (drawn even when pinned), so both modes see the same pairs for a seed.
pub fn interpolation_baselines_with_lambda(
    cloud: &PointCloud,
    codec: &Codec,
    rng: &SeededRng,
    mode: InterpMode,
    count: usize,
    fixed_lambda: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Config("baseline sample count must be >= 1".into()));
    }
    let n = cloud.len();
    let mut g = rng.generator();
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        let a = (unit_f64(&mut g) * n as f64) as usize % n;
        let b = (a + 1 + (unit_f64(&mut g) * (n - 1) as f64) as usize % (n - 1)) % n;
        let lambda = unit_f64(&mut g);
        picks.push((a, b, fixed_lambda.unwrap_or(lambda)));
    }
    match mode {
        InterpMode::LatentInterp => {
            let latents: Vec<Vec<f64>> = picks
                .iter()
                .map(|&(a, b, l)| mix(cloud.point(a), cloud.point(b), l))
                .collect();
            codec.decode(&latents)
        }
        InterpMode::InputInterp => {
            let rows: Vec<Vec<f64>> = (0..n).map(|k| cloud.point(k).to_vec()).collect();
            let decoded = codec.decode(&rows)?;
            Ok(picks
                .iter()
                .map(|&(a, b, l)| mix(&decoded[a], &decoded[b], l))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdot::estimate_cells;
    use crate::singularity::{candidate_boundaries, select_singular, AdjacencyMode};

    fn pair() -> PointCloud {
        PointCloud::uniform(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap()
    }

    fn square() -> BaseMeasure {
        BaseMeasure::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    fn rec_ij(i: usize, j: usize, cloud: &PointCloud) -> BoundaryRecord {
        BoundaryRecord {
            i,
            j,
            score: 0.0,
            a: cloud.point(i).iter().zip(cloud.point(j)).map(|(p, q)| p - q).collect(),
            b: 0.0,
            empirically_adjacent: true,
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(interpolation_weights(&[0.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0], 1e-9).unwrap(), (0.5, 0.5));
        let (li, lj) = interpolation_weights(&[0.0], &[1.0], &[-3.0], 1e-9).unwrap();
        assert!((li - 0.75).abs() < 1e-15 && li + lj == 1.0);
        let (li, _) = interpolation_weights(&[0.0], &[0.0], &[1.0], 1e-9).unwrap();
        assert!((li - 1.0 / (1.0 + 1e-9)).abs() < 1e-15);
        assert!(interpolation_weights(&[0.0], &[1.0], &[1.0], 1e-9).is_err());
    }

    #[test]
    fn smoothed_transport_examples() {
        let c = pair();
        let h = PotentialOffsets::zeros(2);
        let b = rec_ij(0, 1, &c);
        let cents = (&[0.5, 0.0][..], &[-0.5, 0.0][..]);
        assert_eq!(smoothed_transport(&c, &h, cents, &b, (0.5, 0.5)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(smoothed_transport(&c, &h, cents, &b, (1.0, 0.0)).unwrap(), vec![1.0, 0.0]);
        let c2 = PointCloud::uniform(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b2 = rec_ij(0, 1, &c2);
        let y = smoothed_transport(&c2, &h, (&[1.0, 0.0], &[0.0, 1.0]), &b2, (0.75, 0.25)).unwrap();
        assert_eq!(y, vec![0.75, 0.25]);
    }

    #[test]
    fn escaped_centroid_fails() {
        let c = pair();
        let h = PotentialOffsets::zeros(2);
        let b = rec_ij(0, 1, &c);
        let err = smoothed_transport(&c, &h, (&[-0.5, 0.0], &[-0.5, 0.0]), &b, (0.5, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Synthesis(_)));
    }

    fn setup(n_per: usize, slab: Slab) -> Vec<SynthesisSample> {
        let c = pair();
        let h = PotentialOffsets::zeros(2);
        let rng = SeededRng::new(21);
        let stats = estimate_cells(&c, &h, &square(), &rng, 20_000).unwrap();
        let cands = candidate_boundaries(&c, &h, &[], AdjacencyMode::AllPairs).unwrap();
        let set = select_singular(&cands, 1.0).unwrap();
        let params = OtisParams {
            per_boundary: n_per,
            slab,
            ..OtisParams::default()
        };
        generate_otis(&c, &h, &set, &stats, &Codec::Identity, &square(), &rng, &params).unwrap()
    }

    #[test]
    fn otis_invariants_hold() {
        for s in setup(200, Slab::Auto) {
            assert_eq!(s.x_hat, s.y_hat);
            assert!(s.lambda_i >= 0.0 && s.lambda_j >= 0.0 && s.lambda_i + s.lambda_j == 1.0);
            // segment [(1,0), (-1,0)]
            assert!(s.y_hat[1] == 0.0 && s.y_hat[0].abs() <= 1.0);
            // slab half-width 0.05 * ‖a‖ = 0.1 around x = 0
            assert!((2.0 * s.z[0]).abs() <= 0.1 + 1e-15);
        }
    }

    #[test]
    fn unrestricted_mean_lambda_is_half() {
        let s = setup(10_000, Slab::Off);
        let mean = s.iter().map(|s| s.lambda_i).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean λ_i {mean}");
    }

    #[test]
    fn deterministic_output() {
        assert_eq!(setup(50, Slab::Auto), setup(50, Slab::Auto));
    }

    #[test]
    fn exhausted_rejection_names_boundary() {
        let c = pair();
        let h = PotentialOffsets::zeros(2);
        let rng = SeededRng::new(1);
        let stats = estimate_cells(&c, &h, &square(), &rng, 2_000).unwrap();
        // move the hyperplane out of the box
        let mut b = rec_ij(0, 1, &c);
        b.b = 10.0;
        let set = SingularSet { records: vec![b], fraction: 1.0 };
        let params = OtisParams {
            per_boundary: 1,
            slab: Slab::Fixed(0.01),
            ..OtisParams::default()
        };
        let err = generate_otis(&c, &h, &set, &stats, &Codec::Identity, &square(), &rng, &params).unwrap_err();
        assert!(err.to_string().contains("0-1"), "{err}");
    }

    #[test]
    fn empty_centroid_is_an_error() {
        let c = pair();
        let h = PotentialOffsets::zeros(2);
        let stats = CellStats::from_sums(2, vec![5, 0], vec![2.5, 0.0, 0.0, 0.0]);
        let set = SingularSet { records: vec![rec_ij(0, 1, &c)], fraction: 1.0 };
        let r = generate_otis(&c, &h, &set, &stats, &Codec::Identity, &square(), &SeededRng::new(0), &OtisParams::default());
        assert!(matches!(r, Err(Error::Synthesis(_))));
    }

    #[test]
    fn slab_parsing() {
        assert_eq!("auto".parse::<Slab>().unwrap(), Slab::Auto);
        assert_eq!("off".parse::<Slab>().unwrap(), Slab::Off);
        assert_eq!("0.2".parse::<Slab>().unwrap(), Slab::Fixed(0.2));
        assert!("-1".parse::<Slab>().is_err());
        let v: Slab = serde_json::from_str("0.3").unwrap();
        assert_eq!(v, Slab::Fixed(0.3));
    }

    #[test]
    fn baselines() {
        let c = PointCloud::uniform(2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -2.0]).unwrap();
        let rng = SeededRng::new(8);
        let latent = interpolation_baselines(&c, &Codec::Identity, &rng, InterpMode::LatentInterp, 64).unwrap();
        let input = interpolation_baselines(&c, &Codec::Identity, &rng, InterpMode::InputInterp, 64).unwrap();
        assert_eq!(latent, input);
        let ends = interpolation_baselines_with_lambda(&c, &Codec::Identity, &rng, InterpMode::LatentInterp, 64, Some(1.0)).unwrap();
        assert!(ends.iter().all(|x| (0..4).any(|k| c.point(k) == x.as_slice())));
        assert!(interpolation_baselines(&c, &Codec::Identity, &rng, InterpMode::LatentInterp, 0).is_err());
    }

    #[test]
    fn mixing_identical_inputs_is_identity() {
        let x = [0.3, -7.1, 1e-3];
        for l in [0.0, 0.17, 0.5, 0.93, 1.0] {
            assert_eq!(mix(&x, &x, l), x.to_vec());
        }
        assert_eq!(mix(&[1.0, 2.0], &[5.0, -2.0], 1.0), vec![1.0, 2.0]);
        assert_eq!(mix(&[1.0, 2.0], &[5.0, -2.0], 0.0), vec![5.0, -2.0]);
    }

    #[test]
    fn pinned_input_mix_returns_decoded_endpoint() {
        let spec = crate::codec::AffineSpec {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
            offset: vec![1.0, 1.0],
        };
        let codec = Codec::affine(&spec).unwrap();
        let c = PointCloud::uniform(2, vec![3.0, 1.5, -1.0, 0.0]).unwrap();
        let out = interpolation_baselines_with_lambda(&c, &codec, &SeededRng::new(2), InterpMode::InputInterp, 8, Some(1.0)).unwrap();
        let decoded = codec.decode(&[c.point(0).to_vec(), c.point(1).to_vec()]).unwrap();
        assert!(out.iter().all(|x| decoded.contains(x)));
    }
}
