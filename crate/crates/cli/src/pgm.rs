use tbm_core::DensityVolume;

/// A 2D section of a volume, rows first.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// The whole image of a 2D volume (rows along the first axis), or the
/// section of a 3D volume at `index` along `axis`, with the remaining axes
/// as rows and columns in order.
pub fn extract(v: &DensityVolume, section: Option<(usize, usize)>) -> Option<Slice> {
    let dims = v.grid().dims();
    match (dims.len(), section) {
        (2, None) => Some(Slice {
            height: dims[0],
            width: dims[1],
            values: v.values().to_vec(),
        }),
        (3, Some((axis, index))) if axis < 3 && index < dims[axis] => {
            let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            let strides = v.grid().strides();
            let (h, w) = (dims[rest[0]], dims[rest[1]]);
            let mut values = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    values.push(v.values()[index * strides[axis] + r * strides[rest[0]] + c * strides[rest[1]]]);
                }
            }
            Some(Slice {
                height: h,
                width: w,
                values,
            })
        }
        _ => None,
    }
}

/// Binary PGM (P5, maxval 255) with `lo..=hi` mapped onto `0..=255`.
pub fn encode(s: &Slice, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    let span = hi - lo;
    out.extend(s.values.iter().map(|&v| {
        if span > 0.0 {
            (255.0 * ((v - lo) / span).clamp(0.0, 1.0)).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn range(slices: &[&Slice]) -> (f64, f64) {
    slices
        .iter()
        .flat_map(|s| s.values.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}
