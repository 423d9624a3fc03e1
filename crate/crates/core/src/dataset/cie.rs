//! CIE 1931 2° standard observer, 450–700 nm at 10 nm.

pub const CMF_START_NM: f64 = 450.0;
pub const CMF_STEP_NM: f64 = 10.0;
pub const CMF_END_NM: f64 = 700.0;

/// `(x̄, ȳ, z̄)` rows.
pub const CMF_1931: [[f64; 3]; 26] = [
    [0.3362, 0.0380, 1.7721],
    [0.2908, 0.0600, 1.6692],
    [0.1954, 0.0910, 1.2876],
    [0.0956, 0.1390, 0.8130],
    [0.0320, 0.2080, 0.4652],
    [0.0049, 0.3230, 0.2720],
    [0.0093, 0.5030, 0.1582],
    [0.0633, 0.7100, 0.0782],
    [0.1655, 0.8620, 0.0422],
    [0.2904, 0.9540, 0.0203],
    [0.4334, 0.9950, 0.0087],
    [0.5945, 0.9950, 0.0039],
    [0.7621, 0.9520, 0.0021],
    [0.9163, 0.8700, 0.0017],
    [1.0263, 0.7570, 0.0011],
    [1.0622, 0.6310, 0.0008],
    [1.0026, 0.5030, 0.0003],
    [0.8544, 0.3810, 0.0002],
    [0.6424, 0.2650, 0.0000],
    [0.4479, 0.1750, 0.0000],
    [0.2835, 0.1070, 0.0000],
    [0.1649, 0.0610, 0.0000],
    [0.0874, 0.0320, 0.0000],
    [0.0468, 0.0170, 0.0000],
    [0.0227, 0.0082, 0.0000],
    [0.0114, 0.0041, 0.0000],
];

/// D65 white point in XYZ with `Y = 1`.
pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear XYZ to linear sRGB (D65).
pub const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2406, -1.5372, -0.4986],
    [-0.9689, 1.8758, 0.0415],
    [0.0557, -0.2040, 1.0570],
];

/// Linearly interpolated CMF value at `nm`, or `None` outside the table.
pub fn cmf_at(nm: f64) -> Option<[f64; 3]> {
    let eps = 1e-9;
    if !(CMF_START_NM - eps..=CMF_END_NM + eps).contains(&nm) {
        return None;
    }
    let pos = ((nm - CMF_START_NM) / CMF_STEP_NM).clamp(0.0, (CMF_1931.len() - 1) as f64);
    let lo = (pos.floor() as usize).min(CMF_1931.len() - 2);
    let t = pos - lo as f64;
    let (a, b) = (CMF_1931[lo], CMF_1931[lo + 1]);
    Some([0, 1, 2].map(|c| (1.0 - t) * a[c] + t * b[c]))
}

pub fn srgb_gamma(linear: f64) -> f64 {
    if linear <= 0.0031308 {
        12.92 * linear
    } else {
        1.055 * linear.powf(1.0 / 2.4) - 0.055
    }
}
