use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type Rgb = [u8; 3];

const SKIN: Rgb = [222, 184, 150];

/// Colors and pattern of one identity's sprite.
///
/// The sprite is a head band over a top and a bottom region; the two body
/// regions carry the identity cues, so part-level pooling has signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Appearance {
    pub top: Rgb,
    pub bottom: Rgb,
    /// Dark horizontal stripes every `stripes` rows of the bottom region
    /// (0 disables).
    pub stripes: u8,
}

const PALETTE: [Rgb; 4] = [[200, 40, 40], [40, 160, 60], [50, 70, 200], [220, 200, 50]];

/// Built-in appearance of identity `id`.
///
/// Identities come in pairs that use the same two colors in swapped
/// regions, so color statistics alone do not separate them.
pub fn identity_appearance(id: usize) -> Appearance {
    const PAIRS: [(usize, usize); 6] = [(0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2)];
    let (a, b) = PAIRS[(id / 2) % PAIRS.len()];
    let (top, bottom) = if id.is_multiple_of(2) { (a, b) } else { (b, a) };
    Appearance {
        top: PALETTE[top],
        bottom: PALETTE[bottom],
        stripes: if (id / PAIRS.len() / 2) % 2 == 1 { 4 } else { 0 },
    }
}

/// How a crossing pair behaves when they meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingStyle {
    /// The two sprites pass through each other.
    PassThrough,
    /// The two sprites meet and turn back.
    Bounce,
}

/// One sprite of the scene: an identity moving back and forth along a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actor {
    pub identity: usize,
    pub appearance: Appearance,
    pub lane: usize,
    /// Frames per full back-and-forth cycle.
    pub period: f64,
    /// Phase offset in frames.
    pub phase: f64,
}

/// Two actors sharing a lane and meeting at the lane center at `first_meet`
/// and every half period after (and before) it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub first: usize,
    pub second: usize,
    pub first_meet: usize,
    pub style: CrossingStyle,
}

/// Per-video imaging conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Per-channel multiplicative gain.
    pub gain: [f64; 3],
    /// Background gray level.
    pub background: u8,
    /// Standard deviation of additive pixel noise, in 0..255 units.
    pub noise: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            gain: [1.0; 3],
            background: 110,
            noise: 6.0,
        }
    }
}

/// Everything needed to regenerate a labeled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub height: usize,
    pub width: usize,
    pub sprite_height: usize,
    pub sprite_width: usize,
    /// Vertical distance between lane tops.
    pub lane_pitch: usize,
    /// Vertical offset of the second actor of a crossing pair.
    pub crossing_offset: usize,
    pub num_frames: usize,
    pub actors: Vec<Actor>,
    pub crossings: Vec<Crossing>,
    pub camera: Camera,
    pub seed: u64,
}

impl SceneScript {
    /// A script with the default geometry (256×128 image, 48×20 sprites,
    /// four lanes) and no actors.
    pub fn empty(num_frames: usize, seed: u64) -> Self {
        SceneScript {
            height: 256,
            width: 128,
            sprite_height: 48,
            sprite_width: 20,
            lane_pitch: 64,
            crossing_offset: 8,
            num_frames,
            actors: Vec::new(),
            crossings: Vec::new(),
            camera: Camera::default(),
            seed,
        }
    }

    /// One actor per identity on its own lane, with periods and phases
    /// drawn from `seed`.
    pub fn lanes(identities: &[usize], num_frames: usize, seed: u64) -> Self {
        let mut script = Self::empty(num_frames, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5c4);
        script.actors = identities
            .iter()
            .enumerate()
            .map(|(lane, &identity)| {
                let period: f64 = rng.gen_range(48.0..96.0);
                Actor {
                    identity,
                    appearance: identity_appearance(identity),
                    lane,
                    period,
                    phase: rng.gen_range(0.0..period),
                }
            })
            .collect();
        script
    }

    /// Two identities crossing on lane 0, meeting first at `first_meet`.
    pub fn crossing(
        pair: (usize, usize),
        style: CrossingStyle,
        period: f64,
        first_meet: usize,
        num_frames: usize,
        seed: u64,
    ) -> Self {
        let mut script = Self::empty(num_frames, seed);
        for identity in [pair.0, pair.1] {
            script.actors.push(Actor {
                identity,
                appearance: identity_appearance(identity),
                lane: 0,
                period,
                phase: 0.0,
            });
        }
        script.crossings.push(Crossing {
            first: 0,
            second: 1,
            first_meet,
            style,
        });
        script
    }

    pub fn num_lanes(&self) -> usize {
        if self.lane_pitch == 0 {
            return 0;
        }
        (self.height.saturating_sub(self.sprite_height + self.crossing_offset)) / self.lane_pitch + 1
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |detail: alloc::string::String| Err(Error::invalid("scene script", detail));
        if self.sprite_height == 0 || self.sprite_width == 0 {
            return invalid("empty sprite".into());
        }
        if self.sprite_height + self.crossing_offset > self.height || self.sprite_width >= self.width {
            return invalid(alloc::format!(
                "sprite {}x{} does not fit a {}x{} image",
                self.sprite_height,
                self.sprite_width,
                self.height,
                self.width
            ));
        }
        if self.sprite_height + self.crossing_offset > self.lane_pitch {
            return invalid("lanes overlap".into());
        }
        if self.sprite_height < 6 {
            return invalid("sprite too short for head, top and bottom regions".into());
        }
        let lanes = self.num_lanes();
        let mut lane_users = vec![0usize; lanes];
        for (i, a) in self.actors.iter().enumerate() {
            if a.lane >= lanes {
                return invalid(alloc::format!("actor {i} on lane {} of {lanes}", a.lane));
            }
            if !a.period.is_finite() || a.period < 2.0 || !a.phase.is_finite() {
                return invalid(alloc::format!("actor {i} has a bad period or phase"));
            }
            if self.actors[..i].iter().any(|b| b.identity == a.identity) {
                return invalid(alloc::format!("identity {} used twice", a.identity));
            }
            lane_users[a.lane] += 1;
        }
        let mut in_pair = vec![false; self.actors.len()];
        let mut last_meet = 0;
        for (k, c) in self.crossings.iter().enumerate() {
            if c.first >= self.actors.len() || c.second >= self.actors.len() || c.first == c.second {
                return invalid(alloc::format!("crossing {k} names bad actors"));
            }
            if in_pair[c.first] || in_pair[c.second] {
                return invalid(alloc::format!("crossing {k} reuses an actor"));
            }
            if self.actors[c.first].lane != self.actors[c.second].lane {
                return invalid(alloc::format!("crossing {k} pairs actors on different lanes"));
            }
            if c.first_meet < last_meet {
                return invalid("crossings are not ordered by time".into());
            }
            last_meet = c.first_meet;
            in_pair[c.first] = true;
            in_pair[c.second] = true;
        }
        for (lane, &users) in lane_users.iter().enumerate() {
            let paired = self.crossings.iter().any(|c| self.actors[c.first].lane == lane);
            if users > 1 && !(users == 2 && paired) {
                return invalid(alloc::format!("lane {lane} has {users} actors outside a crossing pair"));
            }
        }
        Ok(())
    }
}

/// Triangle wave with period 1 in `[-1, 1]`, rising through 0 at 0.
fn triangle(t: f64) -> f64 {
    let u = t - libm::floor(t);
    if u < 0.25 {
        4.0 * u
    } else if u < 0.75 {
        2.0 - 4.0 * u
    } else {
        4.0 * u - 4.0
    }
}

/// One rendered frame with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// 0-based frame index.
    pub index: usize,
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB, row-major, `height * width * 3` bytes.
    pub image: Vec<u8>,
    pub boxes: Vec<BBox>,
    pub ids: Vec<usize>,
    pub confidences: Vec<f64>,
    /// Fraction of each sprite's pixels left visible after occlusion.
    pub visibility: Vec<f64>,
}

impl FrameRecord {
    /// Planar `(3, H, W)` copy scaled to `[0, 1]`.
    pub fn planar(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (p, px) in self.image.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = f64::from(px[c]) / 255.0;
            }
        }
        out
    }
}

fn actor_box(script: &SceneScript, actor: usize, t: usize) -> BBox {
    let a = &script.actors[actor];
    let (h, w) = (script.sprite_height as f64, script.sprite_width as f64);
    let span = script.width as f64 - w;
    let top = (a.lane * script.lane_pitch) as f64;
    let pair = script.crossings.iter().find(|c| c.first == actor || c.second == actor);
    let (x, y) = match pair {
        None => {
            let s = triangle((t as f64 + a.phase) / a.period);
            (span / 2.0 * (1.0 + s), top)
        }
        Some(c) => {
            let s = triangle((t as f64 - c.first_meet as f64) / a.period);
            let s = match c.style {
                CrossingStyle::PassThrough => s,
                CrossingStyle::Bounce => libm::fabs(s),
            };
            let sign = if c.first == actor { -1.0 } else { 1.0 };
            let dy = if c.second == actor {
                script.crossing_offset as f64
            } else {
                0.0
            };
            (span / 2.0 * (1.0 + sign * s), top + dy)
        }
    };
    let (x, y) = (libm::round(x), libm::round(y));
    BBox::new(x, y, x + w, y + h)
}

fn sprite_pixel(app: &Appearance, row: usize, height: usize) -> Rgb {
    let head = height / 6;
    let body = height - head;
    if row < head {
        SKIN
    } else if row < head + body / 2 {
        app.top
    } else {
        let r = row - head - body / 2;
        if app.stripes > 0 && (r / usize::from(app.stripes)) % 2 == 1 {
            app.bottom.map(|c| c / 3)
        } else {
            app.bottom
        }
    }
}

/// Renders every frame of `script`.
///
/// Sprites are painted in actor order, so later actors occlude earlier
/// ones. Ground-truth confidences are drawn in `[0.9, 1.0]`.
pub fn generate_sequence(script: &SceneScript) -> Result<Vec<FrameRecord>> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let noise = Normal::new(0.0, script.camera.noise.max(0.0))
        .map_err(|_| Error::invalid("scene script", "bad camera noise"))?;
    let (hh, ww) = (script.height, script.width);
    let mut frames = Vec::with_capacity(script.num_frames);
    for t in 0..script.num_frames {
        let mut owner = vec![usize::MAX; hh * ww];
        let mut image = vec![0u8; hh * ww * 3];
        let bg = f64::from(script.camera.background);
        let mut canvas = vec![[bg; 3]; hh * ww];
        let boxes: Vec<BBox> = (0..script.actors.len()).map(|a| actor_box(script, a, t)).collect();
        for (a, b) in boxes.iter().enumerate() {
            let app = &script.actors[a].appearance;
            let (x0, y0) = (b.x1 as usize, b.y1 as usize);
            for r in 0..script.sprite_height {
                let color = sprite_pixel(app, r, script.sprite_height);
                for c in 0..script.sprite_width {
                    let p = (y0 + r) * ww + x0 + c;
                    canvas[p] = color.map(f64::from);
                    owner[p] = a;
                }
            }
        }
        for (p, px) in canvas.iter().enumerate() {
            for ch in 0..3 {
                let v = px[ch] * script.camera.gain[ch] + noise.sample(&mut rng);
                image[p * 3 + ch] = v.clamp(0.0, 255.0) as u8;
            }
        }
        let area = (script.sprite_height * script.sprite_width) as f64;
        let visibility = (0..boxes.len())
            .map(|a| owner.iter().filter(|&&o| o == a).count() as f64 / area)
            .collect();
        let confidences = boxes.iter().map(|_| rng.gen_range(0.9..=1.0)).collect();
        frames.push(FrameRecord {
            index: t,
            height: hh,
            width: ww,
            image,
            boxes,
            ids: script.actors.iter().map(|a| a.identity).collect(),
            confidences,
            visibility,
        });
    }
    Ok(frames)
}

/// Settings of the degraded-detection mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionNoise {
    /// Standard deviation of box-corner jitter in pixels.
    pub box_jitter: f64,
    /// Fraction of detections whose confidence drops into `[0.1, 0.6)`.
    pub low_fraction: f64,
}

/// Copies `frames` with jittered boxes and lowered confidences.
///
/// Jittered boxes are clamped to the image and keep at least one pixel of
/// width and height.
pub fn degrade_detections(frames: &[FrameRecord], noise: DetectionNoise, seed: u64) -> Result<Vec<FrameRecord>> {
    if !(0.0..=1.0).contains(&noise.low_fraction) {
        return Err(Error::invalid("detection noise", "low fraction outside [0, 1]"));
    }
    let jitter =
        Normal::new(0.0, noise.box_jitter.max(0.0)).map_err(|_| Error::invalid("detection noise", "bad box jitter"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(frames
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for (b, conf) in out.boxes.iter_mut().zip(out.confidences.iter_mut()) {
                let (w, h) = (f.width as f64, f.height as f64);
                let x1 = (b.x1 + jitter.sample(&mut rng)).clamp(0.0, w - 1.0);
                let y1 = (b.y1 + jitter.sample(&mut rng)).clamp(0.0, h - 1.0);
                let x2 = (b.x2 + jitter.sample(&mut rng)).clamp(x1 + 1.0, w);
                let y2 = (b.y2 + jitter.sample(&mut rng)).clamp(y1 + 1.0, h);
                *b = BBox::new(x1, y1, x2, y2);
                if rng.gen_bool(noise.low_fraction) {
                    *conf = rng.gen_range(0.1..0.6);
                }
            }
            out
        })
        .collect())
}
