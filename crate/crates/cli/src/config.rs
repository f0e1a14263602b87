//! Flat `key = value` run configuration.
//!
//! Resolution order: built-in defaults, then the config file, then `IDVO_*`
//! environment variables, then command-line overrides. The resolved table is
//! echoed next to every output and hashed for the run manifest.

use std::fmt;
use std::path::Path;

use idvo_core::dataset::{Jitter, SceneSpec, SynthConfig, TrajectorySpec};
use idvo_core::masking::DhemParams;
use idvo_core::objective::{GradCheckConfig, InertiaParams, LossWeights, PairMode};
use idvo_core::optimizer::{AdamConfig, OptimizerConfig};
use idvo_core::pipeline::PipelineConfig;
use sha2::{Digest, Sha256};

pub const ENV_PREFIX: &str = "IDVO_";

/// Keys left out of the config hash.
pub const NON_RESULT_KEYS: [&str; 2] = ["out", "threads"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A config value that parses from and renders to one line of text.
pub trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got {s:?}"))
        }
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for usize {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(format!("expected true or false, got {s:?}")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for String {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

/// Image size written `WxH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Value for Resolution {
    fn parse(s: &str) -> Result<Self, String> {
        let bad = || format!("expected WxH, got {s:?}");
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Self { width, height })
    }
    fn render(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }
}

/// Pyramid factors written `1,2,4,8`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scales(pub Vec<usize>);

impl Value for Scales {
    fn parse(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| format!("expected comma-separated integers, got {s:?}"))?;
        Ok(Self(v))
    }
    fn render(&self) -> String {
        self.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Value for PairMode {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "previous" => Ok(PairMode::Previous),
            "next" => Ok(PairMode::Next),
            "both" => Ok(PairMode::Both),
            _ => Err(format!("expected previous, next or both, got {s:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            PairMode::Previous => "previous",
            PairMode::Next => "next",
            PairMode::Both => "both",
        }
        .into()
    }
}

macro_rules! run_config {
    ($( #[doc = $doc:literal] $name:ident : $ty:ty = $default:expr, )*) => {
        /// Every tunable of a run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $doc] pub $name: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl RunConfig {
            /// Key names with their descriptions, in echo order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[
                $( (stringify!($name), $doc.trim_ascii()), )*
            ];

            /// Parses and assigns one key.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $( stringify!($name) => {
                        self.$name = <$ty as Value>::parse(value.trim())
                            .map_err(|e| ConfigError(format!("{key}: {e}")))?;
                    } )*
                    _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(Value::render(&self.$name)), )*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    /// Dataset directory read by `optimize`.
    dataset: String = String::new(),
    /// Output directory.
    out: String = "out".into(),
    /// Seed for generation and initialization.
    seed: u64 = 0,
    /// Worker threads (0 uses every core).
    threads: usize = 0,
    /// Working image size; frames are resized to it on load.
    resolution: Resolution = Resolution { width: 416, height: 128 },
    /// Adam learning rate.
    lr: f64 = 0.0002,
    /// Adam first-moment decay.
    beta1: f64 = 0.9,
    /// Adam second-moment decay.
    beta2: f64 = 0.999,
    /// Adam denominator offset.
    epsilon: f64 = 1e-8,
    /// Final learning rate as a fraction of `lr` (cosine schedule; 1 keeps it constant).
    lr_final: f64 = 1.0,
    /// Adam iterations per snippet.
    iters: usize = 300,
    /// Frames per snippet.
    snippet_len: usize = 5,
    /// Frames between snippet starts.
    snippet_stride: usize = 3,
    /// Inertia loss weight.
    w_inertia: f64 = 1.0,
    /// Reconstruction loss weight.
    w_rec: f64 = 1.0,
    /// SSIM loss weight.
    w_ssim: f64 = 0.2,
    /// 3D alignment loss weight.
    w_3d: f64 = 0.1,
    /// Explainability mask loss weight.
    w_mask: f64 = 0.15,
    /// Pyramid downsampling factors.
    scales: Scales = Scales(vec![1, 2, 4, 8]),
    /// Angular weight in the inertia speed.
    chi: f64 = 100.0,
    /// Typical acceleration.
    a_typ: f64 = 2.0,
    /// Typical jerk.
    j_typ: f64 = 0.5,
    /// Use the absolute value in the inertia ratio denominator.
    inertia_symmetric: bool = true,
    /// Enable the dynamic hard edge mask.
    dhem: bool = true,
    /// Hard-mask width per unit speed (fraction of the image dimension).
    dhem_k_v: f64 = 0.02,
    /// Hard-mask side width per radian of steering (fraction of the width).
    dhem_k_s: f64 = 0.5,
    /// Hard-mask width cap (fraction of the image dimension).
    dhem_w_max: f64 = 0.25,
    /// Iterations between hard-mask refreshes.
    dhem_refresh: usize = 25,
    /// Reference depth for the hard-mask speed.
    dhem_depth_ref: f64 = 25.0,
    /// Drop near-duplicate frames before optimization.
    static_filter: bool = true,
    /// Mean absolute difference below which a frame counts as static.
    static_threshold: f64 = 0.01,
    /// Source frames per target: previous, next or both.
    pair_mode: PairMode = PairMode::Both,
    /// Initial depth.
    init_depth: f64 = 10.0,
    /// Initial forward step per frame.
    init_step: f64 = 0.05,
    /// Initial explainability logit.
    init_logit: f64 = 3.0,
    /// Translation parameter unit.
    translation_unit: f64 = 0.05,
    /// Rotation parameter unit.
    rotation_unit: f64 = 0.01,
    /// Synthetic frame count.
    synth_frames: usize = 20,
    /// Synthetic focal length as a fraction of the width.
    synth_focal: f64 = 0.6,
    /// Randomize synthetic scene dimensions by up to 10 percent.
    synth_randomize: bool = true,
    /// Synthetic mean speed per frame.
    synth_speed: f64 = 0.5,
    /// Synthetic speed oscillation amplitude.
    synth_speed_amplitude: f64 = 0.1,
    /// Synthetic speed oscillation period in frames.
    synth_speed_period: f64 = 24.0,
    /// Synthetic peak heading rate, radians per frame.
    synth_turn_amplitude: f64 = 0.01,
    /// Synthetic heading oscillation period in frames.
    synth_turn_period: f64 = 40.0,
    /// Synthetic corridor half width.
    scene_half_width: f64 = 4.0,
    /// Synthetic floor distance below the camera.
    scene_floor: f64 = 1.5,
    /// Synthetic ceiling distance above the camera.
    scene_ceiling: f64 = 3.0,
    /// Synthetic end wall distance.
    scene_far: f64 = 20.0,
    /// Sinusoids per synthetic surface.
    scene_waves: usize = 24,
    /// Shortest synthetic texture wavelength.
    scene_min_wavelength: f64 = 0.25,
    /// Longest synthetic texture wavelength.
    scene_max_wavelength: f64 = 8.0,
    /// Per-frame translation noise (standard deviation).
    jitter_translation: f64 = 0.0,
    /// Per-frame rotation noise in radians (standard deviation).
    jitter_rotation: f64 = 0.0,
    /// Gradient check probes per block.
    gradcheck_samples: usize = 200,
    /// Gradient check relative error tolerance.
    gradcheck_tolerance: f64 = 1e-3,
    /// Finite-difference step for depth and mask parameters.
    gradcheck_step: f64 = 1e-4,
    /// Finite-difference step for pose parameters.
    gradcheck_pose_step: f64 = 1e-5,
    /// Depth evaluation cap.
    depth_cap: f64 = 80.0,
    /// ATE window length.
    ate_window: usize = 5,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("{origin}:{}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn apply_pairs(&mut self, pairs: &[(String, String)], origin: &str) -> Result<(), ConfigError> {
        for (k, v) in pairs {
            self.set(k, v).map_err(|e| ConfigError(format!("{origin}: {e}")))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let origin = path.display().to_string();
        self.apply_pairs(&parse_pairs(&text, &origin)?, &origin)
    }

    /// Applies `IDVO_<KEY>` variables; unknown `IDVO_` names are rejected.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        vars.sort();
        self.apply_pairs(&vars, "environment")
    }

    /// The resolved table, one `key = value` line per key.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (key, doc) in Self::KEYS {
            s.push_str(&format!("# {doc}\n{key} = {}\n", self.get(key).unwrap_or_default()));
        }
        s
    }

    /// Hex SHA-256 over every key that can change results (all but `out`
    /// and `threads`).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (key, _) in Self::KEYS.iter().filter(|(k, _)| !NON_RESULT_KEYS.contains(k)) {
            h.update(format!("{key}={}\n", self.get(key).unwrap_or_default()).as_bytes());
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_inertia: self.w_inertia,
            w_rec: self.w_rec,
            w_ssim: self.w_ssim,
            w_3d: self.w_3d,
            w_mask: self.w_mask,
            scales: self.scales.0.clone(),
        }
    }

    pub fn inertia(&self) -> InertiaParams {
        InertiaParams {
            chi: self.chi,
            a_typ: self.a_typ,
            j_typ: self.j_typ,
            symmetric: self.inertia_symmetric,
        }
    }

    pub fn dhem_params(&self) -> DhemParams {
        DhemParams {
            k_v: self.dhem_k_v,
            k_s: self.dhem_k_s,
            w_max: self.dhem_w_max,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            lr_final: self.lr_final,
            iters: self.iters,
            snippet_len: self.snippet_len,
            weights: self.weights(),
            inertia: self.inertia(),
            dhem: self.dhem_params(),
            dhem_enabled: self.dhem,
            dhem_refresh: self.dhem_refresh,
            dhem_depth_ref: self.dhem_depth_ref,
            static_threshold: self.static_threshold,
            pair_mode: self.pair_mode,
            init_depth: self.init_depth,
            init_step: self.init_step,
            init_logit: self.init_logit,
            translation_unit: self.translation_unit,
            rotation_unit: self.rotation_unit,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            optimizer: self.optimizer(),
            stride: self.snippet_stride,
            static_filter: self.static_filter,
        }
    }

    pub fn jitter(&self) -> Jitter {
        Jitter {
            translation: self.jitter_translation,
            rotation: self.jitter_rotation,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            width: self.resolution.width,
            height: self.resolution.height,
            frames: self.synth_frames,
            focal: self.synth_focal,
            scene: SceneSpec {
                half_width: self.scene_half_width,
                floor: self.scene_floor,
                ceiling: self.scene_ceiling,
                far: self.scene_far,
                waves: self.scene_waves,
                min_wavelength: self.scene_min_wavelength,
                max_wavelength: self.scene_max_wavelength,
            },
            randomize_scene: self.synth_randomize,
            trajectory: TrajectorySpec {
                speed: self.synth_speed,
                speed_amplitude: self.synth_speed_amplitude,
                speed_period: self.synth_speed_period,
                turn_amplitude: self.synth_turn_amplitude,
                turn_period: self.synth_turn_period,
                stop: None,
            },
            jitter: self.jitter(),
            seed: self.seed,
        }
    }

    pub fn gradcheck(&self, corrupt: bool) -> GradCheckConfig {
        GradCheckConfig {
            step: self.gradcheck_step,
            pose_step: self.gradcheck_pose_step,
            samples: self.gradcheck_samples,
            tolerance: self.gradcheck_tolerance,
            corrupt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_values() {
        let c = RunConfig::default();
        assert_eq!(c.chi, 100.0);
        assert_eq!((c.w_inertia, c.w_rec, c.w_ssim, c.w_3d, c.w_mask), (1.0, 1.0, 0.2, 0.1, 0.15));
        assert_eq!((c.a_typ, c.j_typ), (2.0, 0.5));
        assert_eq!((c.lr, c.beta1, c.beta2), (0.0002, 0.9, 0.999));
        assert_eq!(c.resolution, Resolution { width: 416, height: 128 });
        assert_eq!(c.optimizer(), OptimizerConfig { seed: 0, ..OptimizerConfig::default() });
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("lr", "0.125").unwrap();
        c.set("scales", "1,2").unwrap();
        c.set("pair_mode", "next").unwrap();
        c.set("out", "/tmp/x").unwrap();
        let mut d = RunConfig::default();
        d.apply_pairs(&parse_pairs(&c.echo(), "echo").unwrap(), "echo").unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash(), d.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
        d.set("out", "/elsewhere").unwrap();
        d.set("threads", "3").unwrap();
        assert_eq!(c.hash(), d.hash());
    }

    #[test]
    fn float_echo_is_lossless() {
        let mut c = RunConfig::default();
        c.lr = 0.1 + 0.2;
        let mut d = RunConfig::default();
        d.set("lr", &c.get("lr").unwrap()).unwrap();
        assert_eq!(c.lr.to_bits(), d.lr.to_bits());
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("learning_rate", "0.1").is_err());
        assert!(c.set("lr", "fast").is_err());
        assert!(c.set("lr", "nan").is_err());
        assert!(c.set("resolution", "416").is_err());
        assert!(parse_pairs("lr 0.1", "f").is_err());
        assert!(c.apply_env([("IDVO_NOPE".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn comments_and_env_apply() {
        let pairs = parse_pairs("# header\nlr = 0.5 # trailing\n\niters=7\n", "f").unwrap();
        let mut c = RunConfig::default();
        c.apply_pairs(&pairs, "f").unwrap();
        assert_eq!((c.lr, c.iters), (0.5, 7));
        c.apply_env([
            ("IDVO_ITERS".to_string(), "9".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        assert_eq!(c.iters, 9);
    }
}
