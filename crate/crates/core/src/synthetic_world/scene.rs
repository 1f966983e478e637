use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{WorldConfig, N_BINS};
use super::figure::{Articulation, Ellipse, Figure, N_PARTS, PAINT_ORDER};
use super::WorldError;
use crate::coco_io::{AnnotationSet, Category, ImageInfo, Instance, Keypoint, RleMask};
use crate::geometry::{bbox_iou_unchecked, masks_from_labels, BBox};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 200;

/// Pinhole camera with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.focal * p[0] / p[2] + self.cx, self.focal * p[1] / p[2] + self.cy)
    }

    pub fn backproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.focal, (v - self.cy) * z / self.focal, z]
    }
}

/// One ground-truth person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub instance_id: u64,
    /// 0 is nearest to the camera.
    pub depth_rank: usize,
    pub scale: f64,
    /// True image locations; flag 2 visible, 1 occluded by a nearer person, 0 outside the image.
    pub keypoints: Vec<(f64, f64, u8)>,
    pub keypoints_3d: Vec<[f64; 3]>,
    pub parts: Vec<Ellipse>,
    /// Full-figure extent clipped to the image.
    pub bbox: BBox,
    /// Visible pixels.
    pub mask: RleMask,
    /// Visible pixels of each body part.
    pub part_masks: Vec<RleMask>,
    pub amodal_area: u64,
    pub truncated: bool,
}

impl Person {
    pub fn visible_fraction(&self) -> f64 {
        if self.amodal_area == 0 {
            0.0
        } else {
            self.mask.area() as f64 / self.amodal_area as f64
        }
    }

    /// COCO keypoints with out-of-image entries zeroed.
    pub fn coco_keypoints(&self) -> Vec<Keypoint> {
        self.keypoints
            .iter()
            .map(|&(x, y, f)| if f == 0 { Keypoint::unlabeled() } else { Keypoint::new(x, y, f) })
            .collect()
    }

    pub fn to_instance(&self, image_id: u64) -> Instance {
        Instance::new(self.instance_id, image_id, self.bbox)
            .with_mask(self.mask.clone())
            .with_keypoints(self.coco_keypoints())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub camera: Camera,
    pub people: Vec<Person>,
    /// Digest of everything above.
    pub digest: String,
}

impl Scene {
    fn seal(mut self) -> Self {
        self.digest = String::new();
        self.digest = crate::digest::json_digest(&self);
        self
    }

    /// Index of the person whose visible region contains pixel `(x, y)`.
    pub fn person_at(&self, x: f64, y: f64) -> Option<usize> {
        let (px, py) = (x.floor() as i64, y.floor() as i64);
        self.people.iter().position(|p| p.mask.contains(px, py))
    }

    /// `(person, part)` visible at pixel `(x, y)`.
    pub fn part_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (px, py) = (x.floor() as i64, y.floor() as i64);
        let p = self.person_at(x, y)?;
        let part = self.people[p].part_masks.iter().position(|m| m.contains(px, py))?;
        Some((p, part))
    }

    pub fn in_image(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    pub fn image_info(&self) -> ImageInfo {
        ImageInfo::new(self.id, self.width, self.height, format!("scene_{:06}.png", self.id))
    }

    /// Ground truth of this scene as a one-image annotation set.
    pub fn annotation_set(&self) -> AnnotationSet {
        AnnotationSet {
            images: vec![self.image_info()],
            instances: self.people.iter().map(|p| p.to_instance(self.id)).collect(),
            categories: vec![Category::coco_person()],
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Group {
    Single,
    /// Pair whose box IoU falls in this bin.
    Pair(usize),
}

struct Placed {
    group: Group,
    figures: Vec<(Figure, f64)>,
    /// Local extent (x0, y0, x1, y1).
    extent: (f64, f64, f64, f64),
}

fn sample_groups(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<Group> {
    // weight per group type, so that instance-level fractions match the bin weights
    let mut kinds: Vec<(Group, f64)> = vec![(Group::Single, cfg.ioumax_weights[0])];
    for b in 1..N_BINS {
        kinds.push((Group::Pair(b), cfg.ioumax_weights[b] / 2.0));
    }
    let total: f64 = kinds.iter().map(|k| k.1).sum();
    let single_possible = cfg.ioumax_weights[0] > 0.0;
    let target = rng.random_range(cfg.n_people[0]..=cfg.n_people[1]);
    let mut groups = Vec::new();
    let mut count = 0;
    while count < target {
        let mut u = rng.random_range(0.0..total);
        let mut pick = kinds[kinds.len() - 1].0;
        for &(g, w) in &kinds {
            if u < w {
                pick = g;
                break;
            }
            u -= w;
        }
        let size = if pick == Group::Single { 1 } else { 2 };
        if size == 2 && count + 2 > cfg.n_people[1] && single_possible {
            continue;
        }
        groups.push(pick);
        count += size;
    }
    groups
}

fn extent_of(figs: &[(Figure, f64)]) -> (f64, f64, f64, f64) {
    figs.iter()
        .map(|(f, _)| f.extent())
        .fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| {
            (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))
        })
}

fn extent_box(e: (f64, f64, f64, f64)) -> BBox {
    BBox::new(e.0, e.1, e.2 - e.0, e.3 - e.1)
}

fn place_group(cfg: &WorldConfig, group: Group, rng: &mut ChaCha8Rng) -> Option<Placed> {
    let [s_lo, s_hi] = cfg.scale_range;
    let scale_a = rng.random_range(s_lo..=s_hi);
    let art_a = Articulation::sample(rng);
    let fig_a = Figure::new(0.0, 0.0, scale_a, &art_a);
    let figures = match group {
        Group::Single => vec![(fig_a, scale_a)],
        Group::Pair(bin) => {
            let width = 1.0 / N_BINS as f64;
            let lo = bin as f64 * width;
            let target = rng.random_range(lo + 0.1 * width..lo + 0.9 * width);
            // tight overlaps need similar figures: pull the partner towards A
            let spread = ((1.0 - target) * 2.5).clamp(0.2, 1.0);
            let scale_b = (scale_a * (1.0 + spread * rng.random_range(-0.08..0.08))).clamp(s_lo, s_hi);
            let art_b = art_a.blend(&Articulation::sample(rng), spread);
            let dy = spread * rng.random_range(-0.05..0.05) * scale_a;
            let box_a = extent_box(fig_a.extent());
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let iou_at = |dx: f64| {
                let fb = Figure::new(side * dx, dy, scale_b, &art_b);
                bbox_iou_unchecked(&box_a, &extent_box(fb.extent()), false)
            };
            if iou_at(0.0) < target {
                return None;
            }
            // IoU is non-increasing in |dx|; find the largest dx still reaching the target
            let (mut near, mut far) = (0.0, 2.0 * s_hi);
            for _ in 0..60 {
                let mid = 0.5 * (near + far);
                if iou_at(mid) >= target {
                    near = mid;
                } else {
                    far = mid;
                }
            }
            let fig_b = Figure::new(side * near, dy, scale_b, &art_b);
            vec![(fig_a, scale_a), (fig_b, scale_b)]
        }
    };
    let extent = extent_of(&figures);
    Some(Placed { group, figures, extent })
}

fn translate(fig: &Figure, dx: f64, dy: f64) -> Figure {
    Figure {
        keypoints: fig.keypoints.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
        parts: fig.parts.iter().map(|e| Ellipse { cx: e.cx + dx, cy: e.cy + dy, ..*e }).collect(),
    }
}

fn clip_box(e: (f64, f64, f64, f64), w: u32, h: u32) -> BBox {
    let x0 = e.0.max(0.0);
    let y0 = e.1.max(0.0);
    let x1 = e.2.min(w as f64);
    let y1 = e.3.min(h as f64);
    BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
}

/// Pixel-centre raster of a figure, limited to its extent.
fn paint_figure(fig: &Figure, w: u32, h: u32, mut put: impl FnMut(usize, usize)) {
    for &part in PAINT_ORDER.iter() {
        let e = &fig.parts[part];
        let (x0, y0, x1, y1) = e.extent();
        let xs = (x0.floor().max(0.0) as u32).min(w);
        let xe = ((x1.ceil() + 1.0).max(0.0) as u32).min(w);
        let ys = (y0.floor().max(0.0) as u32).min(h);
        let ye = ((y1.ceil() + 1.0).max(0.0) as u32).min(h);
        for x in xs..xe {
            for y in ys..ye {
                if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    put(x as usize * h as usize + y as usize, part);
                }
            }
        }
    }
}

/// Generates one scene. Deterministic in `(cfg, id, seed)`.
pub fn generate_scene(cfg: &WorldConfig, id: u64, seed: u64) -> Result<Scene, WorldError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = sample_groups(cfg, &mut rng);
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);
    let camera = Camera { focal: 500.0, cx: wf / 2.0, cy: hf / 2.0 };

    'attempt: for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut placed = Vec::with_capacity(groups.len());
        for &g in &groups {
            match place_group(cfg, g, &mut rng) {
                Some(p) => placed.push(p),
                None => continue 'attempt,
            }
        }
        placed.shuffle(&mut rng);
        let widths: Vec<f64> = placed.iter().map(|p| p.extent.2 - p.extent.0).collect();
        let free = wf - widths.iter().sum::<f64>();
        if free < 0.0 || placed.iter().any(|p| p.extent.3 - p.extent.1 > hf) {
            continue;
        }
        // random gaps between side-by-side groups
        let mut cuts: Vec<f64> = (0..placed.len()).map(|_| rng.random_range(0.0..=free)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut offsets = Vec::with_capacity(placed.len());
        let mut cursor = 0.0;
        let mut prev_cut = 0.0;
        for (i, p) in placed.iter().enumerate() {
            cursor += cuts[i] - prev_cut;
            prev_cut = cuts[i];
            let dx = cursor - p.extent.0;
            let room = hf - (p.extent.3 - p.extent.1);
            let dy = rng.random_range(0.0..=room) - p.extent.1;
            offsets.push((dx, dy));
            cursor += widths[i];
        }
        if rng.random_bool(cfg.truncation_prob) {
            let (gi, dir) = if rng.random_bool(0.5) { (0, -1.0) } else { (placed.len() - 1, 1.0) };
            let shift = rng.random_range(0.15..0.45) * widths[gi];
            let gap = if dir < 0.0 {
                offsets[gi].0 + placed[gi].extent.0
            } else {
                wf - (offsets[gi].0 + placed[gi].extent.2)
            };
            offsets[gi].0 += dir * (gap + shift);
        }

        // absolute figures, each tagged with its group
        let mut figs: Vec<(Figure, f64, usize)> = Vec::new();
        for (gi, (p, &(dx, dy))) in placed.iter().zip(&offsets).enumerate() {
            for (f, s) in &p.figures {
                figs.push((translate(f, dx, dy), *s, gi));
            }
        }
        let n = figs.len();
        let mut depth: Vec<usize> = (0..n).collect();
        depth.shuffle(&mut rng);

        // painter's algorithm: far to near
        let mut owner = vec![0u16; w as usize * h as usize];
        let mut part_label = vec![0u16; w as usize * h as usize];
        let mut amodal = vec![0u64; n];
        let mut by_depth: Vec<usize> = (0..n).collect();
        by_depth.sort_by_key(|&i| std::cmp::Reverse(depth[i]));
        for &i in &by_depth {
            let mut touched: Vec<usize> = Vec::new();
            paint_figure(&figs[i].0, w, h, |idx, part| {
                owner[idx] = i as u16 + 1;
                part_label[idx] = (i * N_PARTS + part) as u16 + 1;
                touched.push(idx);
            });
            touched.sort_unstable();
            touched.dedup();
            amodal[i] = touched.len() as u64;
        }
        let masks = masks_from_labels(&owner, h, w, n);
        let part_masks = masks_from_labels(&part_label, h, w, n * N_PARTS);

        let mut people = Vec::with_capacity(n);
        for i in 0..n {
            let (fig, scale, _) = &figs[i];
            let ext = fig.extent();
            let bbox = clip_box(ext, w, h);
            if bbox.w <= 1.0 || bbox.h <= 1.0 {
                continue 'attempt;
            }
            let truncated = ext.0 < 0.0 || ext.1 < 0.0 || ext.2 > wf || ext.3 > hf;
            let z_base = 3.0 + 0.5 * depth[i] as f64;
            let keypoints: Vec<(f64, f64, u8)> = fig
                .keypoints
                .iter()
                .map(|&(x, y)| {
                    let flag = if !(x >= 0.0 && y >= 0.0 && x < wf && y < hf) {
                        0
                    } else if masks[i].contains(x.floor() as i64, y.floor() as i64) {
                        2
                    } else {
                        1
                    };
                    (x, y, flag)
                })
                .collect();
            let keypoints_3d = fig
                .keypoints
                .iter()
                .map(|&(x, y)| camera.backproject(x, y, z_base + rng.random_range(-0.08..0.08)))
                .collect();
            people.push(Person {
                instance_id: id * 1000 + i as u64 + 1,
                depth_rank: depth[i],
                scale: *scale,
                keypoints,
                keypoints_3d,
                parts: fig.parts.clone(),
                bbox,
                mask: masks[i].clone(),
                part_masks: part_masks[i * N_PARTS..(i + 1) * N_PARTS].to_vec(),
                amodal_area: amodal[i],
                truncated,
            });
        }
        if people.iter().any(|p| p.visible_fraction() < cfg.min_visible_fraction.max(1e-9)) {
            continue;
        }
        // the realized pair IoU must stay in its bin after clipping
        for (gi, g) in placed.iter().enumerate() {
            if g.figures.len() == 2 {
                let members: Vec<&Person> =
                    people.iter().zip(&figs).filter(|(_, f)| f.2 == gi).map(|(p, _)| p).collect();
                let iou = bbox_iou_unchecked(&members[0].bbox, &members[1].bbox, false);
                let bin = ((iou * N_BINS as f64) as usize).min(N_BINS - 1);
                let Group::Pair(want) = g.group else { continue 'attempt };
                if bin != want {
                    continue 'attempt;
                }
            }
        }
        let scene = Scene { id, seed, width: w, height: h, camera, people, digest: String::new() };
        return Ok(scene.seal());
    }
    Err(WorldError::PlacementFailure { scene_id: id, attempts: MAX_PLACEMENT_ATTEMPTS })
}
