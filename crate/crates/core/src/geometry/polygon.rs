//! Convex polygon clipping and area.

use super::real::Real;

/// Consecutive vertices closer than this are merged.
pub const VERTEX_EPS: f64 = 1e-9;

pub type Point<T> = [T; 2];

#[inline]
fn cross<T: Real>(o: Point<T>, a: Point<T>, b: Point<T>) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clip `subject` against every edge of the convex, counter-clockwise
/// polygon `clip` (Sutherland–Hodgman).
pub fn clip_convex<T: Real>(subject: &[Point<T>], clip: &[Point<T>]) -> Vec<Point<T>> {
    let mut output: Vec<Point<T>> = subject.to_vec();
    let mut input: Vec<Point<T>> = Vec::with_capacity(8);
    for k in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let a = clip[k];
        let b = clip[(k + 1) % clip.len()];
        let mut prev = input[input.len() - 1];
        let mut prev_side = cross(a, b, prev);
        for &cur in input.iter() {
            let cur_side = cross(a, b, cur);
            let cur_in = cur_side.value() >= 0.0;
            let prev_in = prev_side.value() >= 0.0;
            if cur_in != prev_in {
                // Edge crosses the clipping line; interpolate by signed distances.
                let t = prev_side / (prev_side - cur_side);
                push_dedup(
                    &mut output,
                    [
                        prev[0] + (cur[0] - prev[0]) * t,
                        prev[1] + (cur[1] - prev[1]) * t,
                    ],
                );
            }
            if cur_in {
                push_dedup(&mut output, cur);
            }
            prev = cur;
            prev_side = cur_side;
        }
        if output.len() > 1 {
            let first = output[0];
            let last = output[output.len() - 1];
            if close(first, last) {
                output.pop();
            }
        }
    }
    output
}

#[inline]
fn close<T: Real>(a: Point<T>, b: Point<T>) -> bool {
    (a[0].value() - b[0].value()).abs() <= VERTEX_EPS
        && (a[1].value() - b[1].value()).abs() <= VERTEX_EPS
}

#[inline]
fn push_dedup<T: Real>(poly: &mut Vec<Point<T>>, p: Point<T>) {
    if let Some(&last) = poly.last() {
        if close(last, p) {
            return;
        }
    }
    poly.push(p);
}

/// Signed shoelace area (positive for counter-clockwise order).
pub fn signed_area<T: Real>(poly: &[Point<T>]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc.scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point<f64>> {
        vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
    }

    #[test]
    fn clip_overlapping_squares() {
        let inter = clip_convex(&square(0.0, 0.0, 2.0), &square(1.0, 1.0, 2.0));
        assert!((signed_area(&inter) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let inter = clip_convex(&square(0.0, 0.0, 1.0), &square(3.0, 3.0, 1.0));
        assert!(signed_area(&inter).abs() < 1e-12);
    }

    #[test]
    fn clip_contained() {
        let inter = clip_convex(&square(0.5, 0.5, 1.0), &square(0.0, 0.0, 4.0));
        assert_eq!(inter.len(), 4);
        assert!((signed_area(&inter) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_edge_has_no_area() {
        let inter = clip_convex(&square(0.0, 0.0, 1.0), &square(1.0, 0.0, 1.0));
        assert!(signed_area(&inter).abs() < 1e-12);
    }
}
