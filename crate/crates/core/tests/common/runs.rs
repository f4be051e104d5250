//! Small end-to-end configurations written into scratch directories.

use std::fs;
use std::path::{Path, PathBuf};

use windcollapse::pipeline::RunConfig;

use super::structural::PORTAL;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Two-story bay with gravity loads, written to `dir/frame.toml`.
pub fn write_small_frame(dir: &Path) -> PathBuf {
    // lighter braces so the stronger storms yield the bay
    let mut text = PORTAL.replace("tf = 0.016\ntw = 0.01\n", "tf = 0.006\ntw = 0.004\n");
    assert_ne!(text, PORTAL);
    for (node, dead, live) in [(11, 80e3, 30e3), (12, 80e3, 30e3), (21, 80e3, 30e3), (22, 80e3, 30e3), (31, 4e5, 1.5e5), (32, 4e5, 1.5e5)] {
        text.push_str(&format!("[[gravity]]\nnode = {node}\ndead = {dead}\nlive = {live}\n"));
    }
    let path = dir.join("frame.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn small_config_text(dir: &Path, jobs: usize) -> String {
    let wind = data_dir().join("wind_record.csv").canonicalize().unwrap();
    format!(
        r#"seed = 424242
jobs = {jobs}
output_dir = "out"

[paths]
wind_record = "{wind}"
frame = "frame.toml"

[hazard]
n_w = 4
top_aer = 1e-3

[loads]
dt = 0.06
envelope = {{ loaded = 40.0, ramp_up = 5.0, ramp_down = 5.0, tail = 10.0 }}

[loads.synthetic]
breadth = 200.0
reference_speed = 50.0
d_omega = 0.02
n_omega = 512
n_modes = 2
direction_step = 30.0

[sampling]
total = 24
pilot = 12
min_per_stratum = 2
allocate_on = "system-collapse"
"#,
        wind = wind.display(),
    )
    .replace("{dir}", &dir.display().to_string())
}

/// Writes the frame and `run.toml` into `dir` and loads the configuration.
pub fn small_config(dir: &Path, jobs: usize) -> RunConfig {
    write_small_frame(dir);
    let path = dir.join("run.toml");
    fs::write(&path, small_config_text(dir, jobs)).unwrap();
    RunConfig::load(&path).unwrap()
}
