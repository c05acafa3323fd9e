use serde::{Deserialize, Serialize};

use super::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// Binary erosion/dilation with a 3x3 square element, repeated `iterations`
/// times. Pixels outside the grid count as unset.
pub fn morphology(mask: &BinaryMask, op: MorphOp, iterations: usize) -> BinaryMask {
    let mut current = mask.clone();
    for _ in 0..iterations {
        current = step(&current, op);
    }
    current
}

pub fn erode(mask: &BinaryMask, iterations: usize) -> BinaryMask {
    morphology(mask, MorphOp::Erode, iterations)
}

pub fn dilate(mask: &BinaryMask, iterations: usize) -> BinaryMask {
    morphology(mask, MorphOp::Dilate, iterations)
}

fn step(mask: &BinaryMask, op: MorphOp) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let mut all = true;
        let mut any = false;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                let v =
                    nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && mask.get(nx as usize, ny as usize);
                all &= v;
                any |= v;
            }
        }
        match op {
            MorphOp::Erode => all,
            MorphOp::Dilate => any,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iterations_is_identity() {
        let m = BinaryMask::from_fn(6, 5, |x, y| (x + y) % 3 == 0);
        assert_eq!(erode(&m, 0), m);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn full_five_by_five_erodes_to_center() {
        let e = erode(&BinaryMask::full(5, 5), 1);
        let expected = BinaryMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        assert_eq!(e, expected);
    }

    #[test]
    fn single_pixel_dilates_to_square() {
        let mut m = BinaryMask::empty(7, 7);
        m.set(3, 3, true);
        assert_eq!(dilate(&m, 2).count(), 25);
    }
}
