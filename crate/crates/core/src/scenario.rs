//! Scenario files: model, scene, gains, task, simulation settings and the
//! scripted operator, bundled for headless runs.
//!
//! Every section is optional. `model`, `scene` and `gains` may be given inline
//! or as `{"path": "..."}` relative to the scenario file. Partial `scene`,
//! `gains`, `task` and `sim` objects are laid over the defaults.

use crate::arm_model::ArmModel;
use crate::control::{Gains, TaskId};
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::sim::{build_operator, Operator, PolicyParams, SimConfig};
use crate::trial::TaskSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: ArmModel,
    pub scene: Scene,
    pub gains: Gains,
    pub task: TaskSpec,
    pub sim: SimConfig,
    pub policy: PolicyParams,
}

fn overlay(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                overlay(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn section_error(section: &str, e: impl std::fmt::Display) -> Error {
    Error::Invalid {
        what: "scenario",
        reason: format!("{section}: {e}"),
    }
}

/// Inline value, or the parsed contents of `{"path": ...}`.
fn resolve_section(section: &str, value: Value, base_dir: &Path) -> Result<Value> {
    match value {
        Value::Object(ref m) if m.len() == 1 && m.contains_key("path") => {
            let rel = m["path"]
                .as_str()
                .ok_or_else(|| section_error(section, "path must be a string"))?;
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| section_error(section, format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| section_error(section, format!("{}: {e}", path.display())))
        }
        v => Ok(v),
    }
}

fn layered<T: Serialize + for<'de> Deserialize<'de>>(section: &str, default: &T, over: Option<Value>) -> Result<T> {
    let mut v = serde_json::to_value(default).expect("defaults serialize");
    if let Some(o) = over {
        overlay(&mut v, o);
    }
    serde_json::from_value(v).map_err(|e| section_error(section, e))
}

impl Scenario {
    /// Built-in configuration for a task with the default virtual operator.
    pub fn default_for_task(task: TaskId) -> Scenario {
        Scenario {
            name: format!("task{task}"),
            model: ArmModel::default_profile(),
            scene: Scene::default(),
            gains: Gains::default(),
            task: TaskSpec::for_task(task),
            sim: SimConfig::default(),
            policy: PolicyParams::default_for(task),
        }
    }

    /// Parse scenario text. `task` supplies the task when the file has none
    /// and must agree with it otherwise.
    pub fn parse(text: &str, base_dir: &Path, task: Option<TaskId>) -> Result<Scenario> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Log {
            line: e.line(),
            message: e.to_string(),
        })?;
        let Value::Object(mut root) = root else {
            return Err(section_error("scenario", "top level must be an object"));
        };
        let mut take = |k: &str| root.remove(k);
        let name = match take("name") {
            Some(Value::String(s)) => s,
            None => String::new(),
            Some(_) => return Err(section_error("name", "must be a string")),
        };
        let model_v = take("model");
        let scene_v = take("scene");
        let gains_v = take("gains");
        let task_v = take("task");
        let sim_v = take("sim");
        let policy_v = take("policy");
        if let Some(k) = root.keys().next() {
            return Err(section_error("scenario", format!("unknown section `{k}`")));
        }

        let model = match model_v {
            None => ArmModel::default_profile(),
            Some(v) => {
                let v = resolve_section("model", v, base_dir)?;
                ArmModel::from_json(&v.to_string()).map_err(|e| section_error("model", e))?
            }
        };
        let scene_v = scene_v.map(|v| resolve_section("scene", v, base_dir)).transpose()?;
        let scene: Scene = layered("scene", &Scene::default(), scene_v)?;
        let gains_v = gains_v.map(|v| resolve_section("gains", v, base_dir)).transpose()?;
        let gains: Gains = layered("gains", &Gains::default(), gains_v)?;

        let file_task = match &task_v {
            Some(Value::Object(m)) => match m.get("task_id") {
                Some(id) => Some(serde_json::from_value::<TaskId>(id.clone()).map_err(|e| section_error("task", e))?),
                None => None,
            },
            Some(_) => return Err(section_error("task", "must be an object")),
            None => None,
        };
        let task_id = match (file_task, task) {
            (Some(a), Some(b)) if a != b => {
                return Err(section_error("task", format!("scenario is for task {a}, task {b} requested")))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(section_error("task", "no task_id in the scenario or on the command line")),
        };
        let task: TaskSpec = layered("task", &TaskSpec::for_task(task_id), task_v)?;
        let sim: SimConfig = layered("sim", &SimConfig::default(), sim_v)?;
        let policy = match policy_v {
            None => PolicyParams::default_for(task_id),
            Some(v) => serde_json::from_value(v).map_err(|e| section_error("policy", e))?,
        };
        let s = Scenario {
            name,
            model,
            scene,
            gains,
            task,
            sim,
            policy,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path, task: Option<TaskId>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| section_error("file", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let mut s = Self::parse(&text, &base, task)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.gains.validate()?;
        self.task.validate()?;
        self.sim.validate()?;
        build_operator(self.task.task_id, &self.policy, &self.scene).map(|_| ())
    }

    pub fn operator(&self) -> Result<Box<dyn Operator>> {
        build_operator(self.task.task_id, &self.policy, &self.scene)
    }
}
