//! JSON-lines dataset persistence and CSV ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenario::{AgentKind, AgentTrack, MapElement, Pose2, Scenario, SceneVector, TrajState};
use crate::synthgen::DatasetSplit;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Serialize, Deserialize)]
struct ScenarioRecord {
    v: u64,
    id: String,
    frame: [f64; 3],
    scene: Vec<(f64, f64, u8)>,
    agents: Vec<AgentRecord>,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    id: String,
    past: Vec<(f64, f64, u8)>,
    future: Option<Vec<(f64, f64, u8)>>,
}

fn state_tuple(s: &TrajState) -> (f64, f64, u8) {
    (s.x, s.y, s.semantic.code())
}

fn parse_states(rows: Vec<(f64, f64, u8)>, what: &str) -> Result<Vec<TrajState>, String> {
    rows.into_iter()
        .map(|(x, y, c)| {
            let semantic = AgentKind::try_from(c).map_err(|e| format!("{what}: {e}"))?;
            Ok(TrajState { x, y, semantic })
        })
        .collect()
}

/// Serializes one scenario as a single JSON line (no trailing newline).
pub fn scenario_to_json(s: &Scenario) -> String {
    let record = ScenarioRecord {
        v: SCHEMA_VERSION,
        id: s.id.clone(),
        frame: [s.frame.x, s.frame.y, s.frame.heading],
        scene: s.scene.iter().map(|v| (v.x, v.y, v.attribute.code())).collect(),
        agents: s
            .agents
            .iter()
            .map(|a| AgentRecord {
                id: a.id.clone(),
                past: a.past.iter().map(state_tuple).collect(),
                future: a.future.as_ref().map(|f| f.iter().map(state_tuple).collect()),
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("scenario records always serialize")
}

/// Parses one JSON line; `line` is used for error reporting.
pub fn scenario_from_json(text: &str, line: usize) -> Result<Scenario> {
    let err = |message: String| Error::Dataset { line, message };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION }),
        None => return Err(err("missing field `v`".into())),
    }
    let record: ScenarioRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
    let scene = record
        .scene
        .into_iter()
        .map(|(x, y, c)| MapElement::try_from(c).map(|attribute| SceneVector { x, y, attribute }))
        .collect::<Result<Vec<_>, String>>()
        .map_err(|e| err(format!("scene: {e}")))?;
    let mut agents = Vec::with_capacity(record.agents.len());
    for (i, a) in record.agents.into_iter().enumerate() {
        let past = parse_states(a.past, &format!("agents[{i}].past")).map_err(err)?;
        let future = match a.future {
            Some(f) => Some(parse_states(f, &format!("agents[{i}].future")).map_err(err)?),
            None => None,
        };
        agents.push(AgentTrack::new(a.id, past, future).map_err(|e| err(format!("agents[{i}]: {e}")))?);
    }
    let [x, y, h] = record.frame;
    Scenario::new(record.id, scene, agents, Pose2 { x, y, heading: h }).map_err(|e| err(e.to_string()))
}

pub fn write_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenarios {
        w.write_all(scenario_to_json(s).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(scenario_from_json(&line, i + 1)?);
    }
    Ok(out)
}

/// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
pub fn write_dataset(split: &DatasetSplit, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, part) in SPLIT_NAMES.iter().zip([&split.train, &split.val, &split.test]) {
        write_scenarios(&dir.join(format!("{name}.jsonl")), part)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<DatasetSplit> {
    let read = |name: &str| read_scenarios(&dir.join(format!("{name}.jsonl")));
    Ok(DatasetSplit { train: read("train")?, val: read("val")?, test: read("test")? })
}

/// Maps logical column names to the headers used in the input files.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMap {
    names: BTreeMap<String, String>,
}

const LOGICAL_COLUMNS: [&str; 7] = ["scenario_id", "agent_id", "timestep", "x", "y", "semantic", "attribute"];

impl Default for ColumnMap {
    fn default() -> Self {
        Self { names: LOGICAL_COLUMNS.iter().map(|c| (c.to_string(), c.to_string())).collect() }
    }
}

impl ColumnMap {
    /// Parses `logical=header,...` overrides on top of the identity mapping.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = Self::default();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Csv(format!("column mapping `{pair}` is not key=value")))?;
            let k = k.trim();
            if !LOGICAL_COLUMNS.contains(&k) {
                return Err(Error::Csv(format!("unknown logical column `{k}`")));
            }
            map.names.insert(k.to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    fn header(&self, logical: &str) -> &str {
        &self.names[logical]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IngestOptions {
    pub past_steps: usize,
    pub future_steps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub scenarios: Vec<Scenario>,
    pub dropped_agents: usize,
    /// One message per dropped agent.
    pub diagnostics: Vec<String>,
}

fn column_indices(headers: &csv::StringRecord, map: &ColumnMap, needed: &[&str]) -> Result<Vec<usize>> {
    needed
        .iter()
        .map(|logical| {
            let h = map.header(logical);
            headers
                .iter()
                .position(|c| c.trim() == h)
                .ok_or_else(|| Error::Csv(format!("missing required column `{h}` ({logical})")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Csv(format!("row {row}: cannot parse {name} `{raw}`")))
}

/// Groups track and scene rows into scenarios.
///
/// Per scenario the first `past_steps` distinct timesteps form the history
/// and the next `future_steps` the future. Agents missing any history step
/// are dropped; agents with an incomplete future keep `future = None`.
/// Scenarios, agents and scene vectors are ordered by id / coordinates so the
/// output does not depend on row order.
pub fn ingest_csv(tracks: &Path, scene: &Path, map: &ColumnMap, opts: IngestOptions) -> Result<IngestReport> {
    if opts.past_steps < 2 {
        return Err(Error::Config("past_steps must be at least 2".into()));
    }
    type Row = (f64, f64, f64, AgentKind);
    let mut rows: BTreeMap<String, BTreeMap<String, Vec<Row>>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(tracks).map_err(|e| Error::Csv(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let idx = column_indices(&headers, map, &["scenario_id", "agent_id", "timestep", "x", "y", "semantic"])?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let row = i + 2;
        let sid = rec.get(idx[0]).unwrap_or("").trim().to_string();
        let aid = rec.get(idx[1]).unwrap_or("").trim().to_string();
        let t: f64 = field(&rec, idx[2], row, "timestep")?;
        let x: f64 = field(&rec, idx[3], row, "x")?;
        let y: f64 = field(&rec, idx[4], row, "y")?;
        let code: u8 = field(&rec, idx[5], row, "semantic")?;
        let kind = AgentKind::try_from(code).map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        if !(t.is_finite() && x.is_finite() && y.is_finite()) {
            return Err(Error::Csv(format!("row {row}: non-finite value")));
        }
        rows.entry(sid).or_default().entry(aid).or_default().push((t, x, y, kind));
    }

    let mut scene_rows: BTreeMap<String, Vec<SceneVector>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(scene).map_err(|e| Error::Csv(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let sidx = column_indices(&headers, map, &["scenario_id", "x", "y", "attribute"])?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let row = i + 2;
        let sid = rec.get(sidx[0]).unwrap_or("").trim().to_string();
        let x: f64 = field(&rec, sidx[1], row, "x")?;
        let y: f64 = field(&rec, sidx[2], row, "y")?;
        let code: u8 = field(&rec, sidx[3], row, "attribute")?;
        let attribute = MapElement::try_from(code).map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        scene_rows.entry(sid).or_default().push(SceneVector { x, y, attribute });
    }

    let mut report = IngestReport::default();
    for (sid, agents) in rows {
        let mut steps: Vec<f64> = agents.values().flatten().map(|r| r.0).collect();
        steps.sort_by(f64::total_cmp);
        steps.dedup();
        let past_steps = steps.get(..opts.past_steps);
        let future_steps = steps.get(opts.past_steps..opts.past_steps + opts.future_steps);
        let mut tracks = Vec::new();
        for (aid, mut agent_rows) in agents {
            agent_rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if agent_rows.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Csv(format!("scenario {sid} agent {aid}: non-monotone timesteps")));
            }
            let at = |t: f64| agent_rows.iter().find(|r| r.0 == t);
            let past: Option<Vec<TrajState>> = past_steps.and_then(|ts| {
                ts.iter().map(|&t| at(t).map(|r| TrajState::new(r.1, r.2, r.3))).collect()
            });
            let Some(past) = past else {
                report.dropped_agents += 1;
                report.diagnostics.push(format!(
                    "scenario {sid} agent {aid}: insufficient history (need {} steps)",
                    opts.past_steps
                ));
                continue;
            };
            let future: Option<Vec<TrajState>> = future_steps.filter(|ts| !ts.is_empty()).and_then(|ts| {
                ts.iter().map(|&t| at(t).map(|r| TrajState::new(r.1, r.2, r.3))).collect()
            });
            tracks.push(AgentTrack::new(aid, past, future)?);
        }
        if tracks.is_empty() {
            continue;
        }
        let mut scene = scene_rows.remove(&sid).unwrap_or_default();
        scene.sort_by(|a, b| {
            a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.attribute.code().cmp(&b.attribute.code()))
        });
        report.scenarios.push(Scenario::new(sid, scene, tracks, Pose2::identity())?);
    }
    Ok(report)
}
