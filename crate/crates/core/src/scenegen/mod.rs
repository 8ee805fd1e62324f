//! Procedural stereo scenes with exact ray-cast ground truth, dataset I/O
//! and confidence-thresholded pseudo-labeling.

mod io;
mod pseudo;
mod render;
mod sample;
mod scene;

pub use io::{
    decode_pointmap, encode_pointmap, generate_dataset, list_samples, read_frames, read_pointmap, read_sample,
    sample_dir, write_pointmap, write_sample, DatasetManifest, SampleMeta, GENERATOR_VERSION, POINTMAP_MAGIC,
    POINTMAP_VERSION,
};
pub(crate) use io::{read_json, read_png, write_json, write_png};
pub use pseudo::{pseudo_label, pseudo_label_dataset, Frames, PseudoLabelReport, MIN_RETAINED_FRACTION};
pub use render::{render_stereo, render_view, Sample};
pub use sample::{sample_scene, RandomizationConfig, Range, MAX_ATTEMPTS};
pub use scene::{Caster, Heightfield, Hit, Light, Primitive, SceneSpec, Texture, Wave};
