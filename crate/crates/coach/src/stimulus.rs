//! Drawing stimuli: the hidden expert trajectory, its score normalizer, and a raster
//! rendering that carries no coordinates.

use std::collections::BTreeMap;
use std::io::Cursor;

use base64::Engine;
use corgi_core::envs::drawing::DrawingStimulus;
use corgi_core::traj::Trajectory;
use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::score::ScoreNormalizer;
use crate::{CoachError, Result};

pub const RENDER_SIZE: u32 = 256;
const PEN_RADIUS: f64 = 2.5;

#[derive(Debug, Clone)]
pub struct Stimulus {
    pub id: String,
    pub script: String,
    pub expert: Trajectory,
    /// Expert strokes on the unit canvas, y up.
    pub render: Vec<Vec<[f64; 2]>>,
    pub normalizer: ScoreNormalizer,
}

impl Stimulus {
    pub fn new(
        id: impl Into<String>,
        script: impl Into<String>,
        expert: Trajectory,
        render: Vec<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let normalizer = ScoreNormalizer::new(&expert)?;
        Ok(Self { id: id.into(), script: script.into(), expert, render, normalizer })
    }

    /// A stimulus whose render is the expert drawn as one stroke.
    pub fn from_expert(id: impl Into<String>, expert: Trajectory) -> Result<Self> {
        if expert.width() != 2 {
            return Err(CoachError::Validation(format!("{} is not a drawing", expert.id)));
        }
        let render = vec![expert.steps.iter().map(|p| [p[0], p[1]]).collect()];
        let script = expert.domain.clone();
        Self::new(id, script, expert, render)
    }

    pub fn view(&self) -> Result<StimulusView> {
        Ok(StimulusView {
            stimulus_id: self.id.clone(),
            script: self.script.clone(),
            width: RENDER_SIZE,
            height: RENDER_SIZE,
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(render_png(&self.render, RENDER_SIZE)?),
        })
    }
}

impl TryFrom<&DrawingStimulus> for Stimulus {
    type Error = CoachError;

    fn try_from(d: &DrawingStimulus) -> Result<Self> {
        Self::new(d.id(), d.script.clone(), d.expert.clone(), d.render.clone())
    }
}

/// Render data served to participants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusView {
    pub stimulus_id: String,
    pub script: String,
    pub width: u32,
    pub height: u32,
    pub image_png_base64: String,
}

pub fn stimulus_map(stimuli: impl IntoIterator<Item = Stimulus>) -> Result<BTreeMap<String, Stimulus>> {
    let mut map = BTreeMap::new();
    for s in stimuli {
        if let Some(prev) = map.insert(s.id.clone(), s) {
            return Err(CoachError::Validation(format!("duplicate stimulus {}", prev.id)));
        }
    }
    Ok(map)
}

fn stamp(img: &mut GrayImage, cx: f64, cy: f64) {
    let size = img.width() as i64;
    let r = PEN_RADIUS.ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx.round() as i64 + dx, cy.round() as i64 + dy);
            if (0..size).contains(&x)
                && (0..size).contains(&y)
                && ((dx * dx + dy * dy) as f64) <= PEN_RADIUS * PEN_RADIUS
            {
                img.put_pixel(x as u32, y as u32, Luma([0]));
            }
        }
    }
}

/// Black strokes on white, PNG-encoded.
pub fn render_png(strokes: &[Vec<[f64; 2]>], size: u32) -> Result<Vec<u8>> {
    let mut img = GrayImage::from_pixel(size, size, Luma([255]));
    let scale = (size - 1) as f64;
    let to_px = |p: [f64; 2]| (p[0] * scale, (1.0 - p[1]) * scale);
    for stroke in strokes {
        for (i, &p) in stroke.iter().enumerate() {
            let (x1, y1) = to_px(p);
            let (x0, y0) = if i == 0 { (x1, y1) } else { to_px(stroke[i - 1]) };
            let steps = ((x1 - x0).hypot(y1 - y0) * 2.0).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                stamp(&mut img, x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            }
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| CoachError::Io(std::io::Error::other(e)))?;
    Ok(out.into_inner())
}
