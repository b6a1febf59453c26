//! Axis-aligned box arithmetic in corner form.
//!
//! All functions are total on valid boxes: degenerate (zero-area) boxes are
//! accepted and produce an IoU/GIoU of 0 whenever the relevant area vanishes.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Default IoU threshold for [`nms`].
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.8;

/// Axis-aligned rectangle `(x0, y0, x1, y1)` with `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        // NaN fails both comparisons
        if !(x0 <= x1 && y0 <= y1) {
            return Err(Error::InvalidBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Builds a box from center and size. Negative sizes are rejected.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// `(cx, cy, w, h)`
    pub fn to_center(&self) -> [f64; 4] {
        [
            0.5 * (self.x0 + self.x1),
            0.5 * (self.y0 + self.y1),
            self.width(),
            self.height(),
        ]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

/// Intermediate areas shared by IoU and GIoU.
#[derive(Debug, Clone, Copy)]
struct Overlap {
    iw: f64,
    ih: f64,
    inter: f64,
    union: f64,
    ew: f64,
    eh: f64,
    enclosing: f64,
}

fn overlap(a: &BBox, b: &BBox) -> Overlap {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let ew = a.x1.max(b.x1) - a.x0.min(b.x0);
    let eh = a.y1.max(b.y1) - a.y0.min(b.y0);
    Overlap {
        iw,
        ih,
        inter,
        union,
        ew,
        eh,
        enclosing: ew * eh,
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let o = overlap(a, b);
    if o.union <= 0.0 {
        0.0
    } else {
        o.inter / o.union
    }
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let o = overlap(a, b);
    if o.enclosing <= 0.0 {
        return 0.0;
    }
    let iou = if o.union <= 0.0 { 0.0 } else { o.inter / o.union };
    iou - (o.enclosing - o.union) / o.enclosing
}

/// GIoU together with its gradient with respect to the corners of `a`
/// (`b` held fixed).
///
/// Where a corner of `a` coincides with the matching corner of `b` the
/// min/max selections are not differentiable; the contribution of that
/// selection is taken as zero, which is the one-sided derivative of smaller
/// magnitude.
pub fn giou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let o = overlap(a, b);
    if o.enclosing <= 0.0 || o.union <= 0.0 {
        return (giou(a, b), [0.0; 4]);
    }
    let value = o.inter / o.union - (o.enclosing - o.union) / o.enclosing;

    // d(intersection width/height) per corner of a
    let live_x = o.iw > 0.0;
    let live_y = o.ih > 0.0;
    let d_iw = [
        if live_x && a.x0 > b.x0 { -1.0 } else { 0.0 },
        0.0,
        if live_x && a.x1 < b.x1 { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_ih = [
        0.0,
        if live_y && a.y0 > b.y0 { -1.0 } else { 0.0 },
        0.0,
        if live_y && a.y1 < b.y1 { 1.0 } else { 0.0 },
    ];
    let d_ew = [
        if a.x0 < b.x0 { -1.0 } else { 0.0 },
        0.0,
        if a.x1 > b.x1 { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_eh = [
        0.0,
        if a.y0 < b.y0 { -1.0 } else { 0.0 },
        0.0,
        if a.y1 > b.y1 { 1.0 } else { 0.0 },
    ];
    let (w, h) = (a.width(), a.height());
    let d_area = [-h, -w, h, w];

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_inter = d_iw[k] * o.ih + o.iw * d_ih[k];
        let d_union = d_area[k] - d_inter;
        let d_encl = d_ew[k] * o.eh + o.ew * d_eh[k];
        // giou = I/U - 1 + U/E
        grad[k] = d_inter / o.union - o.inter * d_union / (o.union * o.union) + d_union / o.enclosing
            - o.union * d_encl / (o.enclosing * o.enclosing);
    }
    (value, grad)
}

/// Maps a GIoU value from `[-1, 1]` onto `[0, 1]`.
pub fn rescale_giou(g: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&g) {
        return Err(Error::OutOfRange {
            name: "giou",
            value: g,
            lo: -1.0,
            hi: 1.0,
        });
    }
    Ok((g + 1.0) / 2.0)
}

pub fn box_l1(a: &BBox, b: &BBox) -> f64 {
    a.corners().iter().zip(b.corners()).map(|(p, q)| (p - q).abs()).sum()
}

/// Subgradient of [`box_l1`] with respect to the corners of `a`; zero where
/// coordinates coincide.
pub fn box_l1_grad(a: &BBox, b: &BBox) -> [f64; 4] {
    let (ca, cb) = (a.corners(), b.corners());
    std::array::from_fn(|k| {
        let d = ca[k] - cb[k];
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending probability (ties by lower index) and
/// a candidate is kept iff its IoU with every already-kept box is at most
/// `iou_threshold`. Returns kept indices in visiting order.
pub fn nms(predictions: &[(BBox, f64)], iou_threshold: f64) -> Result<Vec<usize>> {
    check_unit("iou_threshold", iou_threshold)?;
    for (_, p) in predictions {
        check_unit("probability", *p)?;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| predictions[j].1.total_cmp(&predictions[i].1).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let candidate = &predictions[i].0;
        if kept.iter().all(|&k| iou(&predictions[k].0, candidate) <= iou_threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn rejects_negative_extent() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.5, 0.5, 0.5, 0.5).is_ok());
    }

    #[test]
    fn center_round_trip() {
        let a = b(0.1, 0.2, 0.7, 0.5);
        let [cx, cy, w, h] = a.to_center();
        let back = BBox::from_center(cx, cy, w, h).unwrap();
        for (p, q) in a.corners().iter().zip(back.corners()) {
            assert_abs_diff_eq!(*p, q, epsilon = 1e-15);
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 2., 2.), &b(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)), 0.0);
        // inter 1, union 7
        assert_abs_diff_eq!(iou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)), 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_boxes() {
        let p = b(1., 1., 1., 1.);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(giou(&p, &p), 0.0);
        assert_eq!(iou(&p, &b(0., 0., 2., 2.)), 0.0);
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou(&b(0.2, 0.1, 0.9, 0.4), &b(0.2, 0.1, 0.9, 0.4)), 1.0);
        // enclosing (0,0,3,3) = 9, union 7
        assert_abs_diff_eq!(
            giou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)),
            1.0 / 7.0 - 2.0 / 9.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            giou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)),
            -7.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_giou(1.0).unwrap(), 1.0);
        assert_eq!(rescale_giou(-1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(rescale_giou(-0.079365).unwrap(), 0.4603175, epsilon = 1e-12);
        assert!(rescale_giou(1.5).is_err());
        assert!(rescale_giou(f64::NAN).is_err());
    }

    #[test]
    fn l1_examples() {
        let a = b(0., 0., 1., 1.);
        assert_eq!(box_l1(&a, &a), 0.0);
        assert_eq!(box_l1(&a, &b(1., 1., 2., 2.)), 4.0);
        assert_eq!(box_l1(&b(0., 0., 2., 2.), &b(0., 0., 2., 3.)), 1.0);
    }

    #[test]
    fn nms_examples() {
        let same = b(0., 0., 1., 1.);
        assert_eq!(nms(&[(same, 0.8), (same, 0.9)], 0.8).unwrap(), vec![1]);
        let disjoint = [(b(0., 0., 1., 1.), 0.3), (b(4., 4., 5., 5.), 0.7)];
        assert_eq!(nms(&disjoint, 0.0).unwrap(), vec![1, 0]);
        let overlapping = [(b(0., 0., 2., 2.), 0.9), (b(1., 1., 3., 3.), 0.8)];
        assert_eq!(nms(&overlapping, 0.1).unwrap(), vec![0]);
        assert!(nms(&overlapping, 1.5).is_err());
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let a = b(0., 0., 1., 1.);
        assert_eq!(nms(&[(a, 0.5), (a, 0.5)], 0.8).unwrap(), vec![0]);
    }

    #[test]
    fn giou_grad_matches_finite_differences() {
        let target = b(0.3, 0.3, 0.7, 0.7);
        let a = b(0.25, 0.38, 0.62, 0.81);
        let (_, grad) = giou_with_grad(&a, &target);
        let h = 1e-6;
        for k in 0..4 {
            let mut up = a.corners();
            let mut dn = a.corners();
            up[k] += h;
            dn[k] -= h;
            let fd =
                (giou(&BBox::try_from(up).unwrap(), &target) - giou(&BBox::try_from(dn).unwrap(), &target)) / (2.0 * h);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn giou_grad_disjoint_boxes() {
        let target = b(0.0, 0.0, 1.0, 1.0);
        let a = b(2.0, 0.5, 3.0, 1.5);
        let (_, grad) = giou_with_grad(&a, &target);
        let h = 1e-6;
        for k in 0..4 {
            let mut up = a.corners();
            let mut dn = a.corners();
            up[k] += h;
            dn[k] -= h;
            let fd =
                (giou(&BBox::try_from(up).unwrap(), &target) - giou(&BBox::try_from(dn).unwrap(), &target)) / (2.0 * h);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-7);
        }
    }
}
