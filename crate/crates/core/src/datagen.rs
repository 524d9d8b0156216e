//! Procedural two-domain data: articulated 2-D figures with exact part
//! masks and joints.
//!
//! A [`FigureSpec`] fixes the geometry and the flat appearance of one
//! figure. [`render`] rasterizes it: the mask and keypoints depend only on
//! the geometry, while the [`DomainSpec`] corruptions (background texture,
//! colour shift, blur, noise) touch the image alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{BodyPart, DomainTag, HardMask, Image, Joint, KeypointSet, Sample, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Flat,
    Textured,
}

/// Appearance corruption and geometry bias of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub blur_sigma: f32,
    pub color_shift: [f32; 3],
    pub noise_std: f32,
    pub background_mode: BackgroundMode,
    pub pose_distribution_shift: f32,
    pub scale_range: [f32; 2],
}

impl DomainSpec {
    /// Clean synthetic renders.
    pub fn source() -> Self {
        Self {
            blur_sigma: 0.0,
            color_shift: [0.0; 3],
            noise_std: 0.0,
            background_mode: BackgroundMode::Flat,
            pose_distribution_shift: 0.0,
            scale_range: [0.65, 0.9],
        }
    }

    /// Blurred, tinted, noisy renders over clutter, with shifted poses.
    pub fn target() -> Self {
        Self {
            blur_sigma: 0.8,
            color_shift: [0.15, -0.1, 0.12],
            noise_std: 0.025,
            background_mode: BackgroundMode::Textured,
            pose_distribution_shift: 0.5,
            scale_range: [0.55, 0.85],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "source" => Some(Self::source()),
            "target" => Some(Self::target()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("domain {what} out of range")));
        if !(self.blur_sigma >= 0.0 && self.blur_sigma <= 10.0) {
            return bad("blur_sigma");
        }
        if self.color_shift.iter().any(|c| !(-0.3..=0.3).contains(c)) {
            return bad("color_shift");
        }
        if !(0.0..=0.2).contains(&self.noise_std) {
            return bad("noise_std");
        }
        if !(0.0..=1.0).contains(&self.pose_distribution_shift) {
            return bad("pose_distribution_shift");
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= MAX_SCALE) {
            return bad("scale_range");
        }
        Ok(())
    }
}

/// Largest figure height (fraction of the image) that always fits.
pub const MAX_SCALE: f32 = 0.92;

const MARGIN: f32 = 0.02;

/// Angles in radians; index 0 is the anatomical left side, 1 the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAngles {
    pub torso_lean: f32,
    pub head_tilt: f32,
    /// Arm abduction away from the hanging position.
    pub shoulder: [f32; 2],
    /// Forearm flexion toward the body midline.
    pub elbow: [f32; 2],
    /// Leg abduction.
    pub hip: [f32; 2],
    /// Shin flexion toward the midline.
    pub knee: [f32; 2],
}

/// Segment lengths and radii as fractions of the image height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbLengths {
    pub torso: f32,
    pub neck: f32,
    pub head_radius: f32,
    pub upper_arm: f32,
    pub forearm: f32,
    pub thigh: f32,
    pub shin: f32,
    pub arm_radius: f32,
    pub leg_radius: f32,
}

impl LimbLengths {
    fn scaled(&self, f: f32) -> Self {
        Self {
            torso: self.torso * f,
            neck: self.neck * f,
            head_radius: self.head_radius * f,
            upper_arm: self.upper_arm * f,
            forearm: self.forearm * f,
            thigh: self.thigh * f,
            shin: self.shin * f,
            arm_radius: self.arm_radius * f,
            leg_radius: self.leg_radius * f,
        }
    }
}

/// Flat colours of one figure and its background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub skin: [f32; 3],
    pub shirt: [f32; 3],
    pub sleeve: [f32; 3],
    pub forearm: [f32; 3],
    pub pants: [f32; 3],
    pub background: [f32; 3],
    /// Seeds background clutter and sensor noise.
    pub texture_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub joint_angles: JointAngles,
    pub limb_lengths: LimbLengths,
    pub torso_width: f32,
    pub scale: f32,
    /// Pelvis position, normalized.
    pub root_position: [f32; 2],
    pub appearance: Appearance,
}

// (low, high) at zero shift, (low, high) at full shift, anatomical clamp.
struct AngleRange {
    base: (f32, f32),
    shifted: (f32, f32),
    limit: (f32, f32),
}

impl AngleRange {
    fn bounds(&self, shift: f32) -> (f32, f32) {
        let lerp = |a: f32, b: f32| a + (b - a) * shift;
        let lo = lerp(self.base.0, self.shifted.0).max(self.limit.0);
        let hi = lerp(self.base.1, self.shifted.1).min(self.limit.1);
        (lo, hi)
    }

    fn sample(&self, shift: f32, rng: &mut impl Rng) -> f32 {
        let (lo, hi) = self.bounds(shift);
        lo + (hi - lo) * rng.random::<f32>()
    }
}

const LEAN: AngleRange = AngleRange {
    base: (-0.12, 0.12),
    shifted: (-0.35, 0.35),
    limit: (-0.5, 0.5),
};
const HEAD_TILT: AngleRange = AngleRange {
    base: (-0.15, 0.15),
    shifted: (-0.3, 0.3),
    limit: (-0.4, 0.4),
};
const SHOULDER: AngleRange = AngleRange {
    base: (0.1, 1.2),
    shifted: (0.8, 2.6),
    limit: (-0.3, 2.8),
};
const ELBOW: AngleRange = AngleRange {
    base: (0.0, 1.2),
    shifted: (0.6, 2.2),
    limit: (0.0, 2.6),
};
const HIP: AngleRange = AngleRange {
    base: (0.02, 0.35),
    shifted: (0.2, 0.9),
    limit: (-0.3, 1.2),
};
const KNEE: AngleRange = AngleRange {
    base: (0.0, 0.5),
    shifted: (0.5, 2.0),
    limit: (0.0, 2.6),
};

/// Knee flexion range for a given pose shift.
pub fn knee_range(shift: f32) -> (f32, f32) {
    KNEE.bounds(shift)
}

/// Arm abduction range for a given pose shift.
pub fn shoulder_range(shift: f32) -> (f32, f32) {
    SHOULDER.bounds(shift)
}

// Proportions relative to figure height.
const PROPORTIONS: LimbLengths = LimbLengths {
    torso: 0.30,
    neck: 0.03,
    head_radius: 0.075,
    upper_arm: 0.16,
    forearm: 0.15,
    thigh: 0.22,
    shin: 0.22,
    arm_radius: 0.045,
    leg_radius: 0.055,
};
const TORSO_WIDTH: f32 = 0.26;

const SKIN_TONES: [[f32; 3]; 4] = [
    [0.96, 0.80, 0.69],
    [0.87, 0.67, 0.52],
    [0.65, 0.45, 0.32],
    [0.42, 0.28, 0.20],
];

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ]
}

fn color_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

fn sample_appearance(rng: &mut impl Rng) -> Appearance {
    let base = SKIN_TONES[rng.random_range(0..SKIN_TONES.len())];
    let skin = base.map(|c| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
    let shirt = random_color(rng);
    let sleeve = if rng.random_bool(0.7) {
        shirt
    } else {
        random_color(rng)
    };
    let forearm = if rng.random_bool(0.5) { sleeve } else { skin };
    let pants = random_color(rng);
    let mut background = random_color(rng);
    for _ in 0..32 {
        if [skin, shirt, sleeve, pants]
            .iter()
            .all(|&c| color_distance(c, background) > 0.35)
        {
            break;
        }
        background = random_color(rng);
    }
    Appearance {
        skin,
        shirt,
        sleeve,
        forearm,
        pants,
        background,
        texture_seed: rng.random(),
    }
}

/// Draws the geometry and appearance of one figure.
pub fn sample_figure(seed: u64, domain: &DomainSpec) -> FigureSpec {
    let mut rng = rng_for(seed, 0);
    let shift = domain.pose_distribution_shift;
    let [lo, hi] = domain.scale_range;
    let scale = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let mut jitter = || rng.random_range(0.9f32..1.1);
    let proportions = LimbLengths {
        torso: PROPORTIONS.torso * jitter(),
        neck: PROPORTIONS.neck,
        head_radius: PROPORTIONS.head_radius * jitter(),
        upper_arm: PROPORTIONS.upper_arm * jitter(),
        forearm: PROPORTIONS.forearm * jitter(),
        thigh: PROPORTIONS.thigh * jitter(),
        shin: PROPORTIONS.shin * jitter(),
        arm_radius: PROPORTIONS.arm_radius * jitter(),
        leg_radius: PROPORTIONS.leg_radius * jitter(),
    };
    let torso_width_prop = TORSO_WIDTH * jitter();
    let joint_angles = JointAngles {
        torso_lean: LEAN.sample(shift, &mut rng),
        head_tilt: HEAD_TILT.sample(shift, &mut rng),
        shoulder: [
            SHOULDER.sample(shift, &mut rng),
            SHOULDER.sample(shift, &mut rng),
        ],
        elbow: [ELBOW.sample(shift, &mut rng), ELBOW.sample(shift, &mut rng)],
        hip: [HIP.sample(shift, &mut rng), HIP.sample(shift, &mut rng)],
        knee: [KNEE.sample(shift, &mut rng), KNEE.sample(shift, &mut rng)],
    };
    let mut spec = FigureSpec {
        joint_angles,
        limb_lengths: proportions.scaled(scale),
        torso_width: torso_width_prop * scale,
        scale,
        root_position: [0.0, 0.0],
        appearance: sample_appearance(&mut rng_for(seed, 1)),
    };

    // Shrink oversized figures, then place the bounding box inside the frame.
    let (mut min, mut max) = Skeleton::new(&spec).bounds();
    let room = 1.0 - 2.0 * MARGIN;
    let extent = (max[0] - min[0]).max(max[1] - min[1]);
    if extent > room {
        let f = room / extent;
        spec.limb_lengths = spec.limb_lengths.scaled(f);
        spec.torso_width *= f;
        spec.scale *= f;
        (min, max) = Skeleton::new(&spec).bounds();
    }
    let mut place = |lo: f32, hi: f32| {
        let a = MARGIN - lo;
        let b = 1.0 - MARGIN - hi;
        if b > a {
            rng.random_range(a..b)
        } else {
            a
        }
    };
    spec.root_position = [place(min[0], max[0]), place(min[1], max[1])];
    spec
}

type V2 = [f32; 2];

fn add(a: V2, b: V2) -> V2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn mul(a: V2, s: f32) -> V2 {
    [a[0] * s, a[1] * s]
}

fn dot(a: V2, b: V2) -> f32 {
    a[0] * b[0] + a[1] * b[1]
}

/// Distance from `p` to segment `ab`.
fn segment_distance(p: V2, a: V2, b: V2) -> f32 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = sub(p, add(a, mul(ab, t)));
    dot(d, d).sqrt()
}

/// Joint positions of a figure, relative to its root position.
#[derive(Debug, Clone)]
struct Skeleton {
    pelvis: V2,
    neck: V2,
    up: V2,
    side: V2,
    head_center: V2,
    joints: [V2; NUM_JOINTS],
    lengths: LimbLengths,
    torso_width: f32,
}

impl Skeleton {
    fn new(spec: &FigureSpec) -> Self {
        let a = &spec.joint_angles;
        let l = &spec.limb_lengths;
        let lean = a.torso_lean;
        // y grows downward; `side` points to the figure's anatomical left,
        // which is image-right for a figure facing the viewer.
        let up = [lean.sin(), -lean.cos()];
        let side = [lean.cos(), lean.sin()];
        let down = mul(up, -1.0);
        let pelvis = spec.root_position;
        let neck = add(pelvis, mul(up, l.torso));
        let tilt = lean + a.head_tilt;
        let head_up = [tilt.sin(), -tilt.cos()];
        let head_center = add(neck, mul(head_up, l.neck + l.head_radius));
        let head_top = add(head_center, mul(head_up, 0.8 * l.head_radius));

        // Direction at `angle` from hanging down, rotating toward `sign·side`.
        let limb_dir =
            |angle: f32, sign: f32| add(mul(down, angle.cos()), mul(side, sign * angle.sin()));

        let mut joints = [[0.0; 2]; NUM_JOINTS];
        joints[0] = head_top;
        joints[1] = neck;
        for (i, sign) in [(0usize, 1.0f32), (1, -1.0)] {
            let shoulder = add(
                add(neck, mul(up, -0.06 * spec.scale)),
                mul(side, sign * 0.5 * spec.torso_width * 0.85),
            );
            let elbow = add(shoulder, mul(limb_dir(a.shoulder[i], sign), l.upper_arm));
            let wrist = add(
                elbow,
                mul(limb_dir(a.shoulder[i] - a.elbow[i], sign), l.forearm),
            );
            let hip = add(pelvis, mul(side, sign * spec.torso_width * 0.3));
            let knee = add(hip, mul(limb_dir(a.hip[i], sign), l.thigh));
            let ankle = add(knee, mul(limb_dir(a.hip[i] - a.knee[i], sign), l.shin));
            joints[2 + i] = shoulder;
            joints[4 + i] = elbow;
            joints[6 + i] = wrist;
            joints[8 + i] = hip;
            joints[10 + i] = knee;
            joints[12 + i] = ankle;
        }
        Self {
            pelvis,
            neck,
            up,
            side,
            head_center,
            joints,
            lengths: *l,
            torso_width: spec.torso_width,
        }
    }

    fn torso_axes(&self) -> (V2, f32, f32) {
        let center = mul(add(self.pelvis, self.neck), 0.5);
        let along = 0.5 * self.lengths.torso + 0.1 * self.lengths.torso;
        (center, along, 0.5 * self.torso_width)
    }

    /// Axis-aligned bounds of every drawn shape.
    fn bounds(&self) -> (V2, V2) {
        let l = &self.lengths;
        let mut min = [f32::INFINITY; 2];
        let mut max = [f32::NEG_INFINITY; 2];
        let mut grow = |p: V2, r: f32| {
            for d in 0..2 {
                min[d] = min[d].min(p[d] - r);
                max[d] = max[d].max(p[d] + r);
            }
        };
        grow(self.head_center, l.head_radius);
        let (c, along, across) = self.torso_axes();
        grow(c, along.max(across));
        for (j, p) in self.joints.iter().enumerate() {
            let r = match j {
                2..=7 => l.arm_radius,
                8..=13 => l.leg_radius,
                _ => 0.0,
            };
            grow(*p, r);
        }
        (min, max)
    }

    /// Topmost drawn part at `p`, with a shading factor in (0, 1].
    fn hit(&self, p: V2) -> Option<(BodyPart, Shade)> {
        let l = &self.lengths;
        let j = &self.joints;
        // Reverse draw order: the last drawn part wins.
        let limbs = [
            (BodyPart::RightHand, [3usize, 5, 7], l.arm_radius),
            (BodyPart::LeftHand, [2, 4, 6], l.arm_radius),
            (BodyPart::RightLeg, [9, 11, 13], l.leg_radius),
            (BodyPart::LeftLeg, [8, 10, 12], l.leg_radius),
        ];
        for (part, [a, b, c], r) in limbs {
            let d1 = segment_distance(p, j[a], j[b]);
            let d2 = segment_distance(p, j[b], j[c]);
            let d = d1.min(d2);
            if d <= r {
                let segment = if d1 <= d2 {
                    Segment::Upper
                } else {
                    Segment::Lower
                };
                return Some((
                    part,
                    Shade {
                        depth: d / r,
                        segment,
                    },
                ));
            }
        }
        let dh = dot(sub(p, self.head_center), sub(p, self.head_center)).sqrt();
        if dh <= l.head_radius {
            return Some((
                BodyPart::Head,
                Shade {
                    depth: dh / l.head_radius,
                    segment: Segment::Upper,
                },
            ));
        }
        let (c, along, across) = self.torso_axes();
        let d = sub(p, c);
        let u = dot(d, self.up) / along;
        let v = dot(d, self.side) / across;
        let rho2 = u * u + v * v;
        if rho2 <= 1.0 {
            return Some((
                BodyPart::Torso,
                Shade {
                    depth: v.abs(),
                    segment: Segment::Upper,
                },
            ));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy)]
struct Shade {
    /// 0 on the part's axis, 1 on its outline.
    depth: f32,
    segment: Segment,
}

impl Shade {
    fn factor(&self) -> f32 {
        0.55 + 0.45 * (1.0 - self.depth * self.depth).max(0.0).sqrt()
    }
}

/// Output of [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub mask: HardMask,
    pub keypoints: KeypointSet,
}

fn check_geometry(spec: &FigureSpec) -> Result<()> {
    let l = &spec.limb_lengths;
    let named = [
        ("torso", l.torso),
        ("upper_arm", l.upper_arm),
        ("forearm", l.forearm),
        ("thigh", l.thigh),
        ("shin", l.shin),
        ("head_radius", l.head_radius),
        ("arm_radius", l.arm_radius),
        ("leg_radius", l.leg_radius),
        ("torso_width", spec.torso_width),
    ];
    for (name, v) in named {
        if !(v.is_finite() && v > 1e-6) {
            return Err(Error::Geometry(format!("{name} has degenerate length {v}")));
        }
    }
    Ok(())
}

/// Rasterizes one figure at `resolution`×`resolution`.
pub fn render(spec: &FigureSpec, domain: &DomainSpec, resolution: usize) -> Result<Rendered> {
    if resolution < 32 {
        return Err(Error::Config(format!("resolution {resolution} below 32")));
    }
    check_geometry(spec)?;
    let skel = Skeleton::new(spec);
    let n = resolution;
    let app = &spec.appearance;
    let mut rng = rng_for(app.texture_seed, 2);

    let mut pixels = match domain.background_mode {
        BackgroundMode::Flat => (0..n * n)
            .flat_map(|_| app.background)
            .collect::<Vec<f32>>(),
        BackgroundMode::Textured => textured_background(n, app.background, &mut rng),
    };
    let mut labels = vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let p = [(x as f32 + 0.5) / n as f32, (y as f32 + 0.5) / n as f32];
            if let Some((part, shade)) = skel.hit(p) {
                let i = y * n + x;
                labels[i] = part as u8;
                let base = match (part, shade.segment) {
                    (BodyPart::Head, _) => app.skin,
                    (BodyPart::Torso, _) => app.shirt,
                    (BodyPart::LeftHand | BodyPart::RightHand, Segment::Upper) => app.sleeve,
                    (BodyPart::LeftHand | BodyPart::RightHand, Segment::Lower) => app.forearm,
                    _ => app.pants,
                };
                let f = shade.factor();
                for c in 0..3 {
                    pixels[3 * i + c] = base[c] * f;
                }
            }
        }
    }

    if domain.blur_sigma > 0.0 {
        gaussian_blur(&mut pixels, n, domain.blur_sigma);
    }
    let noise =
        (domain.noise_std > 0.0).then(|| Normal::new(0.0, domain.noise_std).expect("finite std"));
    for px in pixels.chunks_exact_mut(3) {
        for (p, shift) in px.iter_mut().zip(domain.color_shift) {
            let mut v = *p + shift;
            if let Some(noise) = &noise {
                v += noise.sample(&mut rng);
            }
            *p = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    let mut coords = [[0.0; 2]; NUM_JOINTS];
    let mut visible = [true; NUM_JOINTS];
    for (j, c) in coords.iter_mut().enumerate() {
        let p = skel.joints[j];
        *c = [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
        visible[j] = owner_nearby(&labels, n, *c, Joint::owner(j) as u8);
    }
    Ok(Rendered {
        image: Image::from_raw(n, n, pixels),
        mask: HardMask::from_raw(n, n, labels),
        keypoints: KeypointSet { coords, visible },
    })
}

/// Whether a pixel labelled `owner` lies within 2 px of `c`. Joints covered
/// by another part are annotated as not visible.
fn owner_nearby(labels: &[u8], n: usize, c: V2, owner: u8) -> bool {
    let (jx, jy) = (c[0] * n as f32, c[1] * n as f32);
    let (cx, cy) = (jx.floor() as isize, jy.floor() as isize);
    for y in cy - 3..=cy + 3 {
        for x in cx - 3..=cx + 3 {
            if x < 0 || y < 0 || x >= n as isize || y >= n as isize {
                continue;
            }
            let dx = x as f32 + 0.5 - jx;
            let dy = y as f32 + 0.5 - jy;
            if dx * dx + dy * dy <= 4.0 && labels[y as usize * n + x as usize] == owner {
                return true;
            }
        }
    }
    false
}

/// Low-contrast clutter: stripes and ellipses in colours pulled halfway
/// toward the base colour.
fn textured_background(n: usize, base: [f32; 3], rng: &mut impl Rng) -> Vec<f32> {
    let mut pixels: Vec<f32> = (0..n * n).flat_map(|_| base).collect();
    let muted = |c: [f32; 3]| [0, 1, 2].map(|i| 0.5 * (c[i] + base[i]));
    let stripes = rng.random_range(0..=2);
    for _ in 0..stripes {
        let color = muted(random_color(rng));
        let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let period: f32 = rng.random_range(0.1..0.3);
        let duty: f32 = rng.random_range(0.2..0.5);
        let (s, c) = angle.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let t = (x as f32 * c + y as f32 * s) / n as f32 / period;
                if t.rem_euclid(1.0) < duty {
                    pixels[3 * (y * n + x)..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    let blobs = rng.random_range(2..=4);
    for _ in 0..blobs {
        let color = muted(random_color(rng));
        let cx: f32 = rng.random();
        let cy: f32 = rng.random();
        let rx: f32 = rng.random_range(0.05..0.2);
        let ry: f32 = rng.random_range(0.05..0.2);
        for y in 0..n {
            for x in 0..n {
                let dx = ((x as f32 + 0.5) / n as f32 - cx) / rx;
                let dy = ((y as f32 + 0.5) / n as f32 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    pixels[3 * (y * n + x)..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    pixels
}

fn gaussian_blur(pixels: &mut [f32], n: usize, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; pixels.len()];
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                tmp[3 * (y * n + x) + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        w * pixels[3 * (y * n + clamp(x as isize + k as isize - radius)) + c]
                    })
                    .sum();
            }
        }
    }
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                pixels[3 * (y * n + x) + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        w * tmp[3 * (clamp(y as isize + k as isize - radius) * n + x) + c]
                    })
                    .sum();
            }
        }
    }
}

/// Renders samples `seed + i` for `i in 0..n`.
pub fn generate_samples(
    n: usize,
    domain: &DomainSpec,
    seed: u64,
    resolution: usize,
    tag: DomainTag,
) -> Result<Vec<Sample>> {
    domain.validate()?;
    let rendered = exec::map_range(n, |i| {
        let sample_seed = seed.wrapping_add(i as u64);
        render(&sample_figure(sample_seed, domain), domain, resolution).map(|r| (sample_seed, r))
    });
    rendered
        .into_iter()
        .map(|r| {
            r.map(|(id, r)| Sample {
                id,
                image: r.image,
                mask: Some(r.mask),
                keypoints: Some(r.keypoints),
                domain: tag,
            })
        })
        .collect()
}

/// Renders `n` samples and writes them as a dataset directory.
pub fn generate_dataset(
    n: usize,
    domain: &DomainSpec,
    seed: u64,
    resolution: usize,
    tag: DomainTag,
    out_dir: &std::path::Path,
) -> Result<crate::dataset::Manifest> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let samples = generate_samples(n, domain, seed, resolution, tag)?;
    crate::dataset::write_dataset(out_dir, &samples, domain, seed, tag)
}
