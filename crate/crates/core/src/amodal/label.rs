use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::alpha::{alpha_shape_2d, DEFAULT_ALPHA};
use super::camera::CameraModel;
use super::mask::MaskImage;
use super::occlusion::occlusion_order;
use super::raster::rasterize;
use crate::error::{Error, Result};
use crate::geometry::{accumulate, mirror_about_heading, read_ply, PlanarPose, PointCloud};
use crate::metrics::{greedy_match, MATCH_IOU};
use crate::model::{Estimator, Mode};
use crate::simulator::Track;

/// Where per-frame instance shapes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScenario {
    /// Scans accumulated in the object frame with ground-truth poses, then
    /// mirrored about the heading axis.
    GtAccumulation,
    /// Sequential completion of ground-truth instance segments.
    SequentialCompletionGt,
    /// Sequential completion of instance clouds read from files.
    SequentialCompletionExternal,
}

impl LabelScenario {
    pub const ALL: [LabelScenario; 3] = [
        Self::GtAccumulation,
        Self::SequentialCompletionGt,
        Self::SequentialCompletionExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GtAccumulation => "gt_accumulation",
            Self::SequentialCompletionGt => "sequential_completion_gt",
            Self::SequentialCompletionExternal => "sequential_completion_external",
        }
    }

    pub fn needs_estimator(self) -> bool {
        self != Self::GtAccumulation
    }
}

impl FromStr for LabelScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown label mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOptions {
    /// Alpha-shape circumradius limit in pixels.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub fill_holes: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            fill_holes: false,
        }
    }
}

/// Per-frame sensor-frame clouds of one object; poses only when known.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTrack {
    pub id: String,
    pub clouds: Vec<PointCloud>,
    pub poses: Option<Vec<PlanarPose>>,
}

impl From<&Track> for InstanceTrack {
    fn from(t: &Track) -> Self {
        Self {
            id: t.id.clone(),
            clouds: t.clouds.clone(),
            poses: Some(t.poses.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabel {
    pub id: String,
    /// Median camera depth of the projected shape; `None` when nothing
    /// could be projected.
    pub depth: Option<f64>,
    pub amodal: MaskImage,
    pub inmodal: MaskImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub frame: usize,
    pub instances: Vec<InstanceLabel>,
    /// Instance indices from nearest to farthest.
    pub order: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Alpha-shape mask of a sensor-frame cloud and its median depth. Points
/// behind the camera are ignored; points outside the image still shape the
/// outline before clipping.
pub fn mask_for_cloud(cloud: &PointCloud, cam: &CameraModel, opts: &LabelOptions) -> Result<(MaskImage, Option<f64>)> {
    let proj: Vec<_> = cam.project(cloud).into_iter().filter(|p| p.in_front).collect();
    let empty = MaskImage::new(cam.w, cam.h);
    if proj.is_empty() {
        return Ok((empty, None));
    }
    let mut depths: Vec<f64> = proj.iter().map(|p| p.depth).collect();
    let depth = median(&mut depths);
    let uv: Vec<[f64; 2]> = proj.iter().map(|p| [p.u, p.v]).collect();
    match alpha_shape_2d(&uv, opts.alpha) {
        Ok(polys) => Ok((rasterize(&polys, cam.w, cam.h, opts.fill_holes), Some(depth))),
        Err(Error::DegenerateInput(_)) => Ok((empty, None)),
        Err(e) => Err(e),
    }
}

/// Full-shape clouds per frame for one instance under `scenario`.
pub fn instance_shapes(
    scenario: LabelScenario,
    instance: &InstanceTrack,
    estimator: Option<&dyn Estimator>,
) -> Result<Vec<Option<PointCloud>>> {
    let n = instance.clouds.len();
    match scenario {
        LabelScenario::GtAccumulation => {
            let poses = instance.poses.as_ref().ok_or_else(|| {
                Error::MissingGroundTruth(format!("instance {} has no ground-truth poses", instance.id))
            })?;
            if poses.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "instance {} has {} clouds but {} poses",
                    instance.id,
                    n,
                    poses.len()
                )));
            }
            let (frames, frame_poses): (Vec<PointCloud>, Vec<PlanarPose>) = instance
                .clouds
                .iter()
                .zip(poses)
                .filter(|(c, _)| !c.is_empty())
                .map(|(c, p)| (c.clone(), *p))
                .unzip();
            if frames.is_empty() {
                return Ok(vec![None; n]);
            }
            let canonical = mirror_about_heading(&accumulate(&frames, &frame_poses)?, &PlanarPose::identity())?;
            Ok(poses.iter().map(|p| Some(p.apply(&canonical))).collect())
        }
        LabelScenario::SequentialCompletionGt | LabelScenario::SequentialCompletionExternal => {
            let estimator = estimator.ok_or_else(|| {
                Error::Config(format!("label mode {} needs model weights", scenario.name()))
            })?;
            let first = instance.clouds.iter().position(|c| !c.is_empty());
            let Some(first) = first else {
                return Ok(vec![None; n]);
            };
            let estimates = estimator.estimate(&instance.clouds, Mode::Sequential)?;
            // No label before the object is first observed.
            Ok(estimates
                .into_iter()
                .enumerate()
                .map(|(i, (cloud, _))| (i >= first).then_some(cloud))
                .collect())
        }
    }
}

/// Labels every frame of a multi-instance scene. All instances must cover
/// the same frames.
pub fn label_scene(
    scenario: LabelScenario,
    instances: &[InstanceTrack],
    cam: &CameraModel,
    estimator: Option<&dyn Estimator>,
    opts: &LabelOptions,
) -> Result<Vec<FrameLabels>> {
    cam.validate()?;
    if scenario.needs_estimator() && estimator.is_none() {
        return Err(Error::Config(format!("label mode {} needs model weights", scenario.name())));
    }
    if !(opts.alpha > 0.0) {
        return Err(Error::Config("alpha must be positive".into()));
    }
    let frames = instances.first().map_or(0, |i| i.clouds.len());
    if let Some(bad) = instances.iter().find(|i| i.clouds.len() != frames) {
        return Err(Error::ShapeMismatch(format!(
            "instance {} has {} frames, expected {frames}",
            bad.id,
            bad.clouds.len()
        )));
    }
    let shapes = instances
        .iter()
        .map(|i| instance_shapes(scenario, i, estimator))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut amodal = Vec::with_capacity(instances.len());
        let mut depths = Vec::with_capacity(instances.len());
        for s in &shapes {
            let (mask, depth) = match &s[f] {
                Some(cloud) => mask_for_cloud(cloud, cam, opts)?,
                None => (MaskImage::new(cam.w, cam.h), None),
            };
            amodal.push(mask);
            depths.push(depth);
        }
        let keys: Vec<f64> = depths.iter().map(|d| d.unwrap_or(f64::INFINITY)).collect();
        let occ = occlusion_order(&amodal, &keys)?;
        let labels = instances
            .iter()
            .zip(amodal)
            .zip(occ.inmodal)
            .zip(&depths)
            .map(|(((inst, amodal), inmodal), depth)| InstanceLabel {
                id: inst.id.clone(),
                depth: *depth,
                amodal,
                inmodal,
            })
            .collect();
        out.push(FrameLabels {
            frame: f,
            instances: labels,
            order: occ.order,
        });
    }
    Ok(out)
}

pub fn label_track(
    scenario: LabelScenario,
    instance: &InstanceTrack,
    cam: &CameraModel,
    estimator: Option<&dyn Estimator>,
    opts: &LabelOptions,
) -> Result<Vec<FrameLabels>> {
    label_scene(scenario, std::slice::from_ref(instance), cam, estimator, opts)
}

pub fn mask_file_name(frame: usize, instance: usize, amodal: bool) -> String {
    format!("{frame:06}_{instance:03}_{}.pgm", if amodal { "amodal" } else { "inmodal" })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInstanceEntry {
    pub instance: usize,
    pub id: String,
    pub amodal: String,
    pub inmodal: String,
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFrameEntry {
    pub frame: usize,
    pub order: Vec<usize>,
    pub instances: Vec<LabelInstanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub mode: LabelScenario,
    pub frames: Vec<LabelFrameEntry>,
}

/// Writes one amodal and one inmodal PGM per instance per frame plus
/// `labels.json`.
pub fn write_labels(dir: &Path, mode: LabelScenario, labels: &[FrameLabels]) -> Result<LabelManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(labels.len());
    for fl in labels {
        let mut entries = Vec::with_capacity(fl.instances.len());
        for (i, inst) in fl.instances.iter().enumerate() {
            let amodal = mask_file_name(fl.frame, i, true);
            let inmodal = mask_file_name(fl.frame, i, false);
            inst.amodal.write_pgm(&dir.join(&amodal))?;
            inst.inmodal.write_pgm(&dir.join(&inmodal))?;
            entries.push(LabelInstanceEntry {
                instance: i,
                id: inst.id.clone(),
                amodal,
                inmodal,
                depth: inst.depth,
            });
        }
        frames.push(LabelFrameEntry {
            frame: fl.frame,
            order: fl.order.clone(),
            instances: entries,
        });
    }
    let manifest = LabelManifest { mode, frames };
    let path = dir.join("labels.json");
    let json = serde_json::to_string_pretty(&manifest).expect("label manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads masks listed in `dir/labels.json`.
pub fn read_labels(dir: &Path) -> Result<(LabelManifest, Vec<FrameLabels>)> {
    let path = dir.join("labels.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: LabelManifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for f in &manifest.frames {
        let instances = f
            .instances
            .iter()
            .map(|e| {
                Ok(InstanceLabel {
                    id: e.id.clone(),
                    depth: e.depth,
                    amodal: MaskImage::read_pgm(&dir.join(&e.amodal))?,
                    inmodal: MaskImage::read_pgm(&dir.join(&e.inmodal))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameLabels {
            frame: f.frame,
            instances,
            order: f.order.clone(),
        });
    }
    Ok((manifest, frames))
}

/// External instance clouds: one PLY path (relative to the manifest) or
/// `null` per frame for each instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalInstances {
    pub instances: Vec<ExternalInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalInstance {
    pub id: String,
    pub frames: Vec<Option<String>>,
}

pub fn load_external_instances(path: &Path) -> Result<Vec<InstanceTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: ExternalInstances = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    spec.instances
        .iter()
        .map(|inst| {
            let clouds = inst
                .frames
                .iter()
                .map(|f| match f {
                    Some(p) => read_ply(&base.join(p)),
                    None => Ok(PointCloud::empty()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(InstanceTrack {
                id: inst.id.clone(),
                clouds,
                poses: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub miou: f64,
    pub percent_miss: f64,
    pub matched: usize,
    pub references: usize,
}

/// Greedy per-frame matching of amodal masks. Reference instances with empty
/// masks are not counted.
pub fn score_labels(pred: &[FrameLabels], reference: &[FrameLabels]) -> Result<LabelScore> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted frames but {} reference frames",
            pred.len(),
            reference.len()
        )));
    }
    let (mut iou_sum, mut matched, mut hits, mut references) = (0.0, 0usize, 0usize, 0usize);
    for (p, r) in pred.iter().zip(reference) {
        let pm: Vec<MaskImage> = p.instances.iter().map(|i| i.amodal.clone()).collect();
        let rm: Vec<MaskImage> = r.instances.iter().map(|i| i.amodal.clone()).filter(|m| m.count() > 0).collect();
        references += rm.len();
        for m in greedy_match(&pm, &rm)? {
            iou_sum += m.iou;
            matched += 1;
            hits += (m.iou >= MATCH_IOU) as usize;
        }
    }
    Ok(LabelScore {
        miou: if matched == 0 { 0.0 } else { iou_sum / matched as f64 },
        percent_miss: if references == 0 {
            0.0
        } else {
            100.0 * (references - hits) as f64 / references as f64
        },
        matched,
        references,
    })
}
