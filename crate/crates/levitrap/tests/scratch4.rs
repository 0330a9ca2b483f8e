//! Temporary profile-init probe (removed before release).

use levitrap::detection::{self, find_peaks, PixelGrid, ProfileParams};

#[test]
#[ignore]
fn profile_init_probe() {
    let (a, w) = (225.0, 4.5);
    let margin: f64 = a + 5.0 * w + 10.0;
    let len = (2.0 * margin).ceil() as usize + 1;
    let truth = ProfileParams {
        i0: 2.1,
        z0: margin,
        w,
        amp_a: a,
        slope_b: 1.0e-3 * (8.0_f64 / a).min(1.0),
        offset_c: 0.106,
    };
    let grid = PixelGrid {
        origin: 0.0,
        pitch: 1.0,
        len,
    };
    let profile = detection::render_profile(&truth, &grid).unwrap();
    let data = &profile.intensities;
    let range = data.iter().cloned().fold(f64::MIN, f64::max)
        - data.iter().cloned().fold(f64::MAX, f64::min);
    let peaks = find_peaks(data, 0.05 * range, 2.0);
    println!("grid len {len}, z0 {margin}, range {range:.4}");
    println!(
        "peaks: {:?}",
        peaks
            .iter()
            .map(|&i| (i, data[i]))
            .collect::<Vec<_>>()
    );
    // Peak widths at half prominence around each detected peak
    for &i in &peaks {
        let c0 = data.iter().cloned().fold(f64::MAX, f64::min);
        let half = c0 + 0.5 * (data[i] - c0);
        let mut lo = i;
        while lo > 0 && data[lo] > half {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < data.len() && data[hi] > half {
            hi += 1;
        }
        println!("peak {i}: half-width {} px", hi - lo);
    }
}
