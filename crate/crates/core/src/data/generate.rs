use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Domain, Emotion, Utterance};
use crate::error::{PeftError, Result};

/// Modulation period in frames.
const MODULATION_PERIOD: f64 = 8.0;
const MODULATION_DEPTH: f64 = 0.3;

/// Knobs for one synthetic corpus.
///
/// Class bases, session offsets and the domain shift direction are drawn
/// from `seed` alone, so an acted and a natural corpus built from the same
/// seed share their underlying emotion structure and differ only in how it
/// is expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub domain: Domain,
    pub sessions: usize,
    /// Utterances per (session, class) cell.
    pub per_cell: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub feat_dim: usize,
    /// Scale of the class-plus-session signal.
    pub gain: f64,
    /// Per-frame Gaussian noise.
    pub noise_sigma: f64,
    /// Upper bound of the blend weight towards a random other class.
    pub ambiguity: f64,
    /// Scale of the covariate shift added to every frame.
    pub domain_shift: f64,
    /// Std of per-session offsets.
    pub session_spread: f64,
    pub vad_noise: f64,
    /// Valence/arousal/dominance anchor per class, in `Emotion::ALL` order.
    pub vad_anchors: [[f64; 3]; 4],
    pub seed: u64,
}

const DEFAULT_ANCHORS: [[f64; 3]; 4] = [
    [0.8, 0.6, 0.5],
    [-0.7, -0.5, -0.4],
    [-0.6, 0.8, 0.7],
    [0.0, 0.0, 0.0],
];

impl CorpusSpec {
    /// Exaggerated, well-separated portrayals.
    pub fn acted(seed: u64) -> Self {
        CorpusSpec {
            domain: Domain::Acted,
            sessions: 5,
            per_cell: 10,
            min_frames: 10,
            max_frames: 20,
            feat_dim: 20,
            gain: 1.0,
            noise_sigma: 0.3,
            ambiguity: 0.0,
            domain_shift: 0.0,
            session_spread: 0.5,
            vad_noise: 0.1,
            vad_anchors: DEFAULT_ANCHORS,
            seed,
        }
    }

    /// Weaker, blended, noisier expression under a covariate shift.
    pub fn natural(seed: u64) -> Self {
        CorpusSpec {
            domain: Domain::Natural,
            gain: 0.6,
            noise_sigma: 0.5,
            ambiguity: 0.5,
            domain_shift: 0.5,
            ..Self::acted(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PeftError::config(format!("corpus spec: {m}")));
        if self.sessions < 2 {
            return bad("at least 2 sessions are required");
        }
        if self.per_cell == 0 {
            return bad("per_cell must be positive");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if self.feat_dim == 0 {
            return bad("feat_dim must be positive");
        }
        let finite = [self.gain, self.noise_sigma, self.ambiguity, self.domain_shift, self.session_spread, self.vad_noise];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("gain, noise, ambiguity, shift, spread and vad_noise must be finite and non-negative");
        }
        if self.ambiguity >= 1.0 {
            return bad("ambiguity must be below 1");
        }
        if self.vad_anchors.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return bad("vad anchors must lie in [-1, 1]");
        }
        Ok(())
    }

    pub fn total_utterances(&self) -> usize {
        self.sessions * self.per_cell * Emotion::ALL.len()
    }
}

struct World {
    class_bases: Vec<Array1<f64>>,
    session_offsets: Vec<Array1<f64>>,
    shift: Array1<f64>,
}

fn gaussian_vector<R: Rng>(n: usize, std: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| { let z: f64 = StandardNormal.sample(rng); std * z })
}

impl World {
    fn draw(spec: &CorpusSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let f = spec.feat_dim;
        let class_bases = (0..Emotion::ALL.len()).map(|_| gaussian_vector(f, 1.0, &mut rng)).collect();
        let session_offsets = (0..spec.sessions).map(|_| gaussian_vector(f, spec.session_spread, &mut rng)).collect();
        let shift = gaussian_vector(f, 1.0, &mut rng);
        World { class_bases, session_offsets, shift }
    }
}

fn utterance_rng(spec: &CorpusSpec, index: u64) -> ChaCha8Rng {
    let salt = match spec.domain {
        Domain::Acted => 0x6163_7465_6400_0000,
        Domain::Natural => 0x6e61_7475_7261_6c00,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt);
    rng.set_stream(index);
    rng
}

/// Generates a corpus. A pure function of `spec`.
///
/// Each frame is `gain·(blend + session offset)·(1 + 0.3·sin(2πt/8 + φ))`
/// plus per-frame noise and, for shifted domains, a fixed offset. `blend`
/// mixes the label's class basis with a random other class by a weight in
/// `[0, ambiguity)`; the label stays the dominant class.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let world = World::draw(spec);
    let shift = &world.shift * spec.domain_shift;
    let mut utterances = Vec::with_capacity(spec.total_utterances());
    let mut index = 0u64;
    for session in 1..=spec.sessions {
        for emotion in Emotion::ALL {
            for i in 0..spec.per_cell {
                let mut rng = utterance_rng(spec, index);
                index += 1;
                let frames_len = rng.random_range(spec.min_frames..=spec.max_frames);
                let phase = rng.random_range(0.0..2.0 * PI);
                let blend = if spec.ambiguity > 0.0 { rng.random_range(0.0..spec.ambiguity) } else { 0.0 };
                let other = (emotion.index() + rng.random_range(1..Emotion::ALL.len())) % Emotion::ALL.len();

                let class_signal = &world.class_bases[emotion.index()] * (1.0 - blend) + &world.class_bases[other] * blend;
                let base = (class_signal + &world.session_offsets[session - 1]) * spec.gain;
                let mut frames = Array2::zeros((frames_len, spec.feat_dim));
                for (t, mut row) in frames.rows_mut().into_iter().enumerate() {
                    let m = 1.0 + MODULATION_DEPTH * (2.0 * PI * t as f64 / MODULATION_PERIOD + phase).sin();
                    for (j, v) in row.iter_mut().enumerate() {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        *v = base[j] * m + spec.noise_sigma * noise + shift[j];
                    }
                }

                let anchor = spec.vad_anchors[emotion.index()];
                let mut vad = [0.0; 3];
                for (k, v) in vad.iter_mut().enumerate() {
                    // Noise truncated at 3σ.
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *v = (anchor[k] + spec.vad_noise * noise.clamp(-3.0, 3.0)).clamp(-1.0, 1.0);
                }

                utterances.push(Utterance {
                    id: format!("{}-s{session}-{}-{i:03}", spec.domain.as_str(), emotion.as_str()),
                    frames,
                    label: emotion,
                    vad,
                    session,
                    domain: spec.domain,
                });
            }
        }
    }
    Ok(Corpus::new(utterances))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = CorpusSpec::natural(11);
        assert_eq!(generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
        let other = CorpusSpec::natural(12);
        assert_ne!(generate_corpus(&spec).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn every_cell_is_filled() {
        let spec = CorpusSpec { per_cell: 3, ..CorpusSpec::acted(1) };
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.len(), spec.total_utterances());
        for row in corpus.cell_counts() {
            assert_eq!(row, [3, 3, 3, 3]);
        }
    }

    #[test]
    fn noiseless_same_class_shares_signal() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            sessions: 2,
            per_cell: 4,
            min_frames: 6,
            max_frames: 6,
            ..CorpusSpec::acted(5)
        };
        let corpus = generate_corpus(&spec).unwrap();
        let happy: Vec<_> = corpus.iter().filter(|u| u.session == 1 && u.label == Emotion::Happy).collect();
        // Every frame is the same vector scaled by the modulation envelope.
        let reference = happy[0].frames.row(0).to_owned();
        let ref_norm = reference.dot(&reference).sqrt();
        for u in &happy {
            for row in u.frames.rows() {
                let cos = row.dot(&reference) / (row.dot(&row).sqrt() * ref_norm);
                assert!((cos - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vad_stays_near_anchor() {
        let spec = CorpusSpec::acted(3);
        let corpus = generate_corpus(&spec).unwrap();
        for u in &corpus {
            let anchor = spec.vad_anchors[u.label.index()];
            for k in 0..3 {
                assert!(u.vad[k].abs() <= 1.0);
                assert!((u.vad[k] - anchor[k]).abs() <= 3.0 * spec.vad_noise + 1e-12);
            }
        }
    }

    #[test]
    fn shared_seed_shares_structure_across_domains() {
        let a = World::draw(&CorpusSpec::acted(9));
        let n = World::draw(&CorpusSpec::natural(9));
        assert_eq!(a.class_bases, n.class_bases);
        assert_eq!(a.session_offsets, n.session_offsets);
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = CorpusSpec::acted(0);
        for bad in [
            CorpusSpec { sessions: 1, ..base.clone() },
            CorpusSpec { per_cell: 0, ..base.clone() },
            CorpusSpec { min_frames: 30, ..base.clone() },
            CorpusSpec { noise_sigma: -1.0, ..base.clone() },
            CorpusSpec { ambiguity: 1.0, ..base.clone() },
        ] {
            assert!(matches!(generate_corpus(&bad), Err(PeftError::Config(_))));
        }
    }
}
