mod common;

use common::spectral::spectral_check;

#[test]
fn three_channel_simulation_reproduces_target() {
    let c = spectral_check(200, 7);
    assert!(c.psd_rms < 0.10, "PSD RMS error {}", c.psd_rms);
    assert!(c.coherence_rms < 0.1, "coherence RMS error {}", c.coherence_rms);
    assert!(c.zero_modes_exact);
}
