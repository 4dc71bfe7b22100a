use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClientDataset, ClientId, Style};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng::{self, purpose};

/// Grayscale image stored as 8-bit intensities; `k` maps to `k / 255`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub pixels: Vec<u8>,
    pub label: u8,
}

impl Image {
    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| p as f64 / 255.0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.intensities().collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.intensities().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Stacks images into a `[n, pixels]` tensor.
pub fn image_batch<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    for im in images {
        data.extend(im.intensities());
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid("empty image batch"));
    }
    let cols = data.len() / rows;
    Tensor::matrix(rows, cols, data)
}

/// A writer's handwriting parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphStyle {
    /// Stroke half-width in unit-square coordinates.
    pub thickness: f64,
    /// Horizontal shear per unit of height.
    pub slant: f64,
    pub scale: f64,
    /// Per-example translation amplitude.
    pub jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Probability that an example is scrawled (extra or missing stroke).
    pub messiness: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePopulation {
    pub side: usize,
    pub classes: usize,
    pub clients: Vec<ClientDataset<Image>>,
}

impl ImagePopulation {
    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn num_examples(&self) -> usize {
        self.clients.iter().map(|c| c.len()).sum()
    }

    pub fn client(&self, id: ClientId) -> Option<&ClientDataset<Image>> {
        self.clients.iter().find(|c| c.id == id)
    }
}

type Seg = ((f64, f64), (f64, f64));

fn template(class: usize) -> Vec<Seg> {
    let (l, r, t, b, m) = (0.25, 0.75, 0.2, 0.8, 0.5);
    match class % 10 {
        0 => vec![((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))],
        1 => vec![((m, t), (m, b)), ((0.35, 0.35), (m, t))],
        2 => vec![((l, t), (r, t)), ((r, t), (0.4, b))],
        3 => vec![((0.3, t), (0.3, b)), ((0.3, b), (r, b))],
        4 => vec![((l, t), (r, b)), ((r, t), (l, b))],
        5 => vec![((0.2, t), (0.8, t)), ((m, t), (m, b))],
        6 => vec![((0.2, 0.35), (0.8, 0.35)), ((0.2, 0.65), (0.8, 0.65))],
        7 => vec![((l, t), (r, t)), ((r, t), (l, b)), ((l, b), (r, b))],
        8 => vec![((m, t), (m, b)), ((0.2, m), (0.8, m))],
        _ => vec![((l, t), (m, b)), ((m, b), (r, t))],
    }
}

fn seg_dist(p: (f64, f64), s: &Seg) -> f64 {
    let ((x0, y0), (x1, y1)) = *s;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - x0) * dx + (p.1 - y0) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (x0 + t * dx, y0 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn random_style(r: &mut ChaCha8Rng, seed: u64) -> GlyphStyle {
    GlyphStyle {
        thickness: r.random_range(0.04..0.10),
        slant: r.random_range(-0.35..0.35),
        scale: r.random_range(0.7..1.1),
        jitter: r.random_range(0.0..0.12),
        noise: r.random_range(0.0..0.15),
        messiness: r.random_range(0.0..0.5),
        seed,
    }
}

fn render(class: usize, side: usize, style: &GlyphStyle, r: &mut ChaCha8Rng) -> Image {
    let mut segs = template(class);
    if r.random::<f64>() < style.messiness {
        let mut wobble = |v: f64| v + r.random_range(-0.25..=0.25);
        for ((x0, y0), (x1, y1)) in segs.iter_mut() {
            (*x0, *y0, *x1, *y1) = (wobble(*x0), wobble(*y0), wobble(*x1), wobble(*y1));
        }
        if segs.len() > 1 && r.random::<bool>() {
            let drop = r.random_range(0..segs.len());
            segs.remove(drop);
        } else {
            let mut pt = || (r.random_range(0.15..0.85), r.random_range(0.15..0.85));
            segs.push((pt(), pt()));
        }
    }
    let (ox, oy) = (
        r.random_range(-1.0..=1.0) * style.jitter,
        r.random_range(-1.0..=1.0) * style.jitter,
    );
    let map = |(x, y): (f64, f64)| {
        let (x, y) = (0.5 + style.scale * (x - 0.5), 0.5 + style.scale * (y - 0.5));
        (x + style.slant * (0.5 - y) + ox, y + oy)
    };
    let segs: Vec<Seg> = segs.into_iter().map(|(a, b)| (map(a), map(b))).collect();
    let aa = 1.0 / side as f64;
    let noise = Normal::new(0.0, style.noise.max(1e-12)).expect("positive std");
    let mut pixels = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let p = ((col as f64 + 0.5) / side as f64, (row as f64 + 0.5) / side as f64);
            let d = segs.iter().map(|s| seg_dist(p, s)).fold(f64::INFINITY, f64::min);
            let v = ((style.thickness - d) / aa + 0.5).clamp(0.0, 1.0) + noise.sample(r);
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Image {
        pixels,
        label: class as u8,
    }
}

/// Renders a population of writers, each with their own style and
/// a class-balanced set of glyphs.
pub fn make_glyph_population(
    num_users: usize,
    examples_per_user: (usize, usize),
    num_classes: usize,
    image_side: usize,
    seed: u64,
) -> Result<ImagePopulation> {
    let (lo, hi) = examples_per_user;
    if !(2..=10).contains(&num_classes) {
        return Err(Error::invalid(format!("num_classes must be in 2..=10, got {num_classes}")));
    }
    if image_side < 8 {
        return Err(Error::invalid(format!("image_side must be >= 8, got {image_side}")));
    }
    if lo == 0 || lo > hi {
        return Err(Error::invalid(format!("examples range {lo}..={hi} is invalid")));
    }
    let mut clients = Vec::with_capacity(num_users);
    for u in 0..num_users as ClientId {
        let style_seed = rng::derive_seed(seed, &[purpose::DATA, u]);
        let mut r = rng::stream(style_seed);
        let style = random_style(&mut r, style_seed);
        let n = r.random_range(lo..=hi);
        let offset = r.random_range(0..num_classes);
        let mut labels: Vec<usize> = (0..n).map(|i| (i + offset) % num_classes).collect();
        labels.shuffle(&mut r);
        let examples = labels
            .into_iter()
            .map(|c| render(c, image_side, &style, &mut r))
            .collect();
        clients.push(ClientDataset {
            id: u,
            style: Style::Glyph(style),
            examples,
        });
    }
    Ok(ImagePopulation {
        side: image_side,
        classes: num_classes,
        clients,
    })
}

/// Inverts every pixel of `⌊fraction·N⌋` uniformly chosen users. Returns
/// the new population and the affected ids in ascending order.
pub fn apply_pixel_inversion(
    pop: &ImagePopulation,
    fraction: f64,
    seed: u64,
) -> Result<(ImagePopulation, Vec<ClientId>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must be in [0, 1], got {fraction}")));
    }
    let n = pop.clients.len();
    let k = (fraction * n as f64).floor() as usize;
    let mut r = rng::stream(rng::derive_seed(seed, &[purpose::BUG]));
    let mut chosen: Vec<usize> = index::sample(&mut r, n, k).into_vec();
    chosen.sort_unstable();
    let mut out = pop.clone();
    for &i in &chosen {
        for im in &mut out.clients[i].examples {
            im.pixels.iter_mut().for_each(|p| *p = 255 - *p);
        }
    }
    let ids = chosen.iter().map(|&i| pop.clients[i].id).collect();
    Ok((out, ids))
}
