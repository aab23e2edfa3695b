//! Brute-force reference implementations used by the acceptance suite. Nothing here calls
//! into the library.

use rand::seq::SliceRandom;
use rand::Rng;

/// Even-odd point-in-polygon test.
pub fn pnpoly(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Row-major pixel-center coverage of the union of `parts`.
pub fn brute_mask(parts: &[Vec<(f64, f64)>], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; width * height];
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            out[r * width + c] = parts.iter().any(|p| pnpoly(p, x, y));
        }
    }
    out
}

/// Rounded mean and clamp flag, or `None` without valid samples.
pub fn mean_oracle(samples: &[f64]) -> Option<(i64, bool)> {
    let valid: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for v in &valid {
        sum += v;
    }
    let m = sum / valid.len() as f64;
    let t = m.trunc();
    let r = if (m - t).abs() >= 0.5 { t + m.signum() } else { t } as i64;
    Some((r.max(0), r < 0))
}

pub fn class_table(h: i64) -> u8 {
    match h {
        0..=10 => 1,
        11..=20 => 2,
        21..=30 => 3,
        31..=40 => 4,
        _ => 5,
    }
}

#[derive(Debug, Clone)]
pub struct Inst {
    /// 0-based.
    pub class: u8,
    /// Integer pixel vertices.
    pub pts: Vec<(i64, i64)>,
    pub conf: f64,
}

#[derive(Debug, Clone)]
pub struct SceneImage {
    pub stem: String,
    pub width: usize,
    pub height: usize,
    pub gt: Vec<Inst>,
    pub pred: Vec<Inst>,
}

pub fn label_text(img: &SceneImage, prediction: bool) -> String {
    let insts = if prediction { &img.pred } else { &img.gt };
    let mut s = String::new();
    for i in insts {
        s += &i.class.to_string();
        for &(x, y) in &i.pts {
            s += &format!(
                " {:.6} {:.6}",
                x as f64 / img.width as f64,
                y as f64 / img.height as f64
            );
        }
        if prediction {
            s += &format!(" {:.6}", i.conf);
        }
        s.push('\n');
    }
    s
}

/// A rectangle inside a 16 px cell with corners pushed outward by up to one pixel.
fn cell_quad(rng: &mut impl Rng, cx: i64, cy: i64) -> Vec<(i64, i64)> {
    let x0 = cx + rng.gen_range(2..6);
    let x1 = cx + rng.gen_range(9..15);
    let y0 = cy + rng.gen_range(2..6);
    let y1 = cy + rng.gen_range(9..15);
    let mut d = || rng.gen_range(0..2);
    vec![
        (x0 - d(), y0 - d()),
        (x1 + d(), y0 - d()),
        (x1 + d(), y1 + d()),
        (x0 - d(), y1 + d()),
    ]
}

/// Up to 10 ground-truth quads in separated 16 px cells across 1-3 images, and up to 15
/// predictions mixing jittered copies and random rectangles. Confidences are distinct
/// multiples of 1/1000.
pub fn random_scene(rng: &mut impl Rng) -> Vec<SceneImage> {
    let n_images = rng.gen_range(1..=3);
    let mut images: Vec<SceneImage> = (0..n_images)
        .map(|i| SceneImage {
            stem: format!("scene_{i}"),
            width: *[32usize, 64].choose(rng).unwrap(),
            height: *[32usize, 64].choose(rng).unwrap(),
            gt: Vec::new(),
            pred: Vec::new(),
        })
        .collect();
    let n_classes = rng.gen_range(1..=5u8);
    let n_gt = rng.gen_range(0..=10);
    for _ in 0..n_gt {
        let img = &mut images[rng.gen_range(0..n_images)];
        let cells_x = img.width as i64 / 16;
        let cells_y = img.height as i64 / 16;
        let used: Vec<(i64, i64)> = img.gt.iter().map(|g| (g.pts[0].0 / 16, g.pts[0].1 / 16)).collect();
        let free: Vec<(i64, i64)> = (0..cells_x)
            .flat_map(|x| (0..cells_y).map(move |y| (x, y)))
            .filter(|c| !used.contains(c))
            .collect();
        if let Some(&(x, y)) = free.choose(rng) {
            let pts = cell_quad(rng, x * 16, y * 16);
            img.gt.push(Inst {
                class: rng.gen_range(0..n_classes),
                pts,
                conf: 0.0,
            });
        }
    }
    let n_pred = rng.gen_range(0..=15);
    let mut confs: Vec<u32> = (1..1000).collect();
    confs.shuffle(rng);
    for &k in &confs[..n_pred] {
        let i = rng.gen_range(0..n_images);
        let (w, h) = (images[i].width as i64, images[i].height as i64);
        let conf = k as f64 / 1000.0;
        let jitter_src = if rng.gen_bool(0.65) { images[i].gt.choose(rng).cloned() } else { None };
        let inst = match jitter_src {
            Some(g) => {
                let (dx, dy) = (rng.gen_range(-3..=3), rng.gen_range(-3..=3));
                let pts = g
                    .pts
                    .iter()
                    .map(|&(x, y)| {
                        (
                            (x + dx + rng.gen_range(-1..=1)).clamp(0, w),
                            (y + dy + rng.gen_range(-1..=1)).clamp(0, h),
                        )
                    })
                    .collect();
                let class = if rng.gen_bool(0.85) { g.class } else { rng.gen_range(0..n_classes) };
                Inst { class, pts, conf }
            }
            None => {
                let x0 = rng.gen_range(0..w - 2);
                let y0 = rng.gen_range(0..h - 2);
                let x1 = rng.gen_range(x0 + 2..=w.min(x0 + 30));
                let y1 = rng.gen_range(y0 + 2..=h.min(y0 + 30));
                Inst {
                    class: rng.gen_range(0..n_classes),
                    pts: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
                    conf,
                }
            }
        };
        images[i].pred.push(inst);
    }
    images
}

/// IoU as an exact ratio `(num, den)`; `(0, 1)` for an empty union.
type Ratio = (u64, u64);

fn box_iou(a: &[(i64, i64)], b: &[(i64, i64)]) -> Ratio {
    let ext = |p: &[(i64, i64)]| {
        (
            p.iter().map(|v| v.0).min().unwrap(),
            p.iter().map(|v| v.1).min().unwrap(),
            p.iter().map(|v| v.0).max().unwrap(),
            p.iter().map(|v| v.1).max().unwrap(),
        )
    };
    let (ax0, ay0, ax1, ay1) = ext(a);
    let (bx0, by0, bx1, by1) = ext(b);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0);
    let inter = (iw * ih) as u64;
    let union = ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0)) as u64 - inter;
    if union == 0 {
        (0, 1)
    } else {
        (inter, union)
    }
}

fn float_pts(p: &[(i64, i64)]) -> Vec<(f64, f64)> {
    p.iter().map(|&(x, y)| (x as f64, y as f64)).collect()
}

fn mask_iou(a: &[bool], b: &[bool]) -> Ratio {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as u64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as u64;
    if union == 0 {
        (0, 1)
    } else {
        (inter, union)
    }
}

fn ratio_gt(a: Ratio, b: Ratio) -> bool {
    (a.0 as u128) * (b.1 as u128) > (b.0 as u128) * (a.1 as u128)
}

/// Max interpolated precision at each of 101 recall levels, compared as exact ratios.
pub fn ap_oracle(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for r in 0..=100usize {
        let mut best: Option<Ratio> = None;
        let mut tp = 0u64;
        for (k, &f) in flags.iter().enumerate() {
            tp += f as u64;
            let n = k as u64 + 1;
            if tp * 100 >= (r * num_gt) as u64 && best.is_none_or(|b| ratio_gt((tp, n), b)) {
                best = Some((tp, n));
            }
        }
        if let Some((t, n)) = best {
            sum += t as f64 / n as f64;
        }
    }
    sum / 101.0
}

/// Precision and recall at the best-F1 confidence cut, enumerating every distinct cut.
pub fn max_f1_oracle(ranked: &[(f64, bool)], num_gt: usize) -> (f64, f64) {
    let mut cuts: Vec<f64> = ranked.iter().map(|r| r.0).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let mut best: Option<(u64, u64)> = None;
    for c in cuts {
        let k = ranked.iter().filter(|r| r.0 >= c).count() as u64;
        let tp = ranked.iter().filter(|r| r.0 >= c && r.1).count() as u64;
        if tp == 0 {
            continue;
        }
        // F1 = 2tp / (k + G)
        let f1 = (2 * tp, k + num_gt as u64);
        if best.is_none_or(|(bt, bk)| ratio_gt(f1, (2 * bt, bk + num_gt as u64))) {
            best = Some((tp, k));
        }
    }
    match best {
        Some((tp, k)) => (tp as f64 / k as f64, tp as f64 / num_gt as f64),
        None => (0.0, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    /// 1-based class label, or 0 for the mean row.
    pub class: u8,
    pub images: usize,
    pub buildings: usize,
    /// `[box, mask]` x `[precision, recall, mAP50, mAP50-95]`.
    pub metrics: [[f64; 4]; 2],
}

pub fn eval_oracle(scene: &[SceneImage]) -> (Vec<OracleRow>, OracleRow) {
    let mut images: Vec<&SceneImage> = scene.iter().collect();
    images.sort_by(|a, b| a.stem.cmp(&b.stem));
    let masks = |img: &SceneImage, insts: &[Inst]| -> Vec<Vec<bool>> {
        insts
            .iter()
            .map(|i| brute_mask(&[float_pts(&i.pts)], img.width, img.height))
            .collect()
    };
    type Masks = Vec<Vec<bool>>;
    let all_masks: Vec<(Masks, Masks)> =
        images.iter().map(|im| (masks(im, &im.gt), masks(im, &im.pred))).collect();
    let mut rows = Vec::new();
    for class in 0..5u8 {
        let num_gt: usize = images
            .iter()
            .map(|im| im.gt.iter().filter(|g| g.class == class).count())
            .sum();
        if num_gt == 0 {
            continue;
        }
        let with = images
            .iter()
            .filter(|im| im.gt.iter().any(|g| g.class == class))
            .count();
        let mut metrics = [[0.0; 4]; 2];
        for (kind, m) in metrics.iter_mut().enumerate() {
            let mut aps = Vec::new();
            for t in 0..10u64 {
                let tau_pct = 50 + 5 * t;
                // (conf, image rank, line, tp)
                let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
                for (rank, im) in images.iter().enumerate() {
                    let gts: Vec<usize> = (0..im.gt.len()).filter(|&g| im.gt[g].class == class).collect();
                    let dets: Vec<(usize, &Inst)> =
                        im.pred.iter().enumerate().filter(|(_, d)| d.class == class).collect();
                    let (gm, dm) = &all_masks[rank];
                    let iou = |d: usize, g: usize| {
                        let (di, gi) = (dets[d].0, gts[g]);
                        if kind == 0 {
                            box_iou(&im.pred[di].pts, &im.gt[gi].pts)
                        } else {
                            mask_iou(&dm[di], &gm[gi])
                        }
                    };
                    let mut order: Vec<usize> = (0..dets.len()).collect();
                    order.sort_by(|&a, &b| dets[b].1.conf.total_cmp(&dets[a].1.conf));
                    let mut used = vec![false; gts.len()];
                    for d in order {
                        let mut best: Option<(usize, Ratio)> = None;
                        for (g, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
                            let v = iou(d, g);
                            if best.is_none_or(|(_, b)| ratio_gt(v, b)) {
                                best = Some((g, v));
                            }
                        }
                        let tp = match best {
                            Some((g, (n, den))) if n * 100 >= tau_pct * den => {
                                used[g] = true;
                                true
                            }
                            _ => false,
                        };
                        ranked.push((dets[d].1.conf, rank, dets[d].0, tp));
                    }
                }
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
                aps.push(ap_oracle(&flags, num_gt));
                if t == 0 {
                    let pairs: Vec<(f64, bool)> = ranked.iter().map(|r| (r.0, r.3)).collect();
                    let (p, r) = max_f1_oracle(&pairs, num_gt);
                    m[0] = p;
                    m[1] = r;
                }
            }
            m[2] = aps[0];
            m[3] = aps.iter().sum::<f64>() / 10.0;
        }
        rows.push(OracleRow {
            class: class + 1,
            images: with,
            buildings: num_gt,
            metrics,
        });
    }
    let mut mean = [[0.0; 4]; 2];
    if !rows.is_empty() {
        for (k, kind) in mean.iter_mut().enumerate() {
            for (j, v) in kind.iter_mut().enumerate() {
                *v = rows.iter().map(|r| r.metrics[k][j]).sum::<f64>() / rows.len() as f64;
            }
        }
    }
    let all = OracleRow {
        class: 0,
        images: scene.len(),
        buildings: rows.iter().map(|r| r.buildings).sum(),
        metrics: mean,
    };
    (rows, all)
}
