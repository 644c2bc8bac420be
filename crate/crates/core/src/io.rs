//! File formats: raw+JSON-header volumes, T-bar and synapse JSON, graph CSV,
//! metric CSVs, and model JSON.
//!
//! Every format has a pure byte-slice parser taking a `name` used in error
//! messages, so parsers are directly drivable from fuzz targets; the
//! path-based wrappers attach real file names and write atomically.

use crate::connectome::ConnectomeGraph;
use crate::error::{Error, Result};
use crate::metrics::{AddedMissed, PrCurve, ScatterRecord};
use crate::mlp::MlpModel;
use crate::psd::{RawPartner, RawSynapse, SynapseSet};
use crate::tbar::TbarPrediction;
use crate::volume::{Dims, GrayVolume, LabelVolume, Point3, ScalarField};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

fn format_err(name: &str, detail: impl Into<String>) -> Error {
    Error::Format {
        path: name.into(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temp file in the target directory plus rename, so partial
/// outputs are never visible under the final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path)
        .map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Volumes: JSON header + companion little-endian raw file.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "u32")]
    U32,
    #[serde(rename = "f32")]
    F32,
}

impl Dtype {
    pub fn elem_size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U32 => 4,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub dtype: Dtype,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderJson {
    dims: [u32; 3],
    dtype: Dtype,
    order: String,
}

pub fn parse_volume_header(name: &str, bytes: &[u8]) -> Result<VolumeHeader> {
    let h: HeaderJson =
        serde_json::from_slice(bytes).map_err(|e| format_err(name, e.to_string()))?;
    if h.order != "x-fastest" {
        return Err(format_err(
            name,
            format!("field \"order\": expected \"x-fastest\", got {:?}", h.order),
        ));
    }
    let [nx, ny, nz] = h.dims;
    // Cap sides so nx*ny*nz*elem_size cannot overflow or exhaust memory on
    // hostile headers.
    const MAX_SIDE: u32 = 1 << 14;
    if nx == 0 || ny == 0 || nz == 0 || nx > MAX_SIDE || ny > MAX_SIDE || nz > MAX_SIDE {
        return Err(format_err(
            name,
            format!("field \"dims\": each side must be in 1..={MAX_SIDE}, got {:?}", h.dims),
        ));
    }
    let dims = Dims::new(nx as usize, ny as usize, nz as usize)
        .map_err(|e| format_err(name, format!("field \"dims\": {e}")))?;
    Ok(VolumeHeader {
        dims,
        dtype: h.dtype,
    })
}

fn check_raw_len(name: &str, header: &VolumeHeader, raw: &[u8]) -> Result<()> {
    let expect = header.dims.len() * header.dtype.elem_size();
    if raw.len() != expect {
        return Err(format_err(
            name,
            format!("raw data: expected {expect} bytes, got {}", raw.len()),
        ));
    }
    Ok(())
}

pub fn decode_gray(name: &str, header: &VolumeHeader, raw: &[u8]) -> Result<GrayVolume> {
    if header.dtype != Dtype::U8 {
        return Err(format_err(name, "field \"dtype\": expected \"u8\""));
    }
    check_raw_len(name, header, raw)?;
    GrayVolume::new(header.dims, raw.to_vec())
}

pub fn decode_labels(name: &str, header: &VolumeHeader, raw: &[u8]) -> Result<LabelVolume> {
    if header.dtype != Dtype::U32 {
        return Err(format_err(name, "field \"dtype\": expected \"u32\""));
    }
    check_raw_len(name, header, raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVolume::new(header.dims, data)
}

pub fn decode_scalar(name: &str, header: &VolumeHeader, raw: &[u8]) -> Result<ScalarField> {
    if header.dtype != Dtype::F32 {
        return Err(format_err(name, "field \"dtype\": expected \"f32\""));
    }
    check_raw_len(name, header, raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ScalarField::new(header.dims, data)
        .map_err(|_| format_err(name, "raw data: non-finite f32 value"))
}

/// Path of the companion raw file: header path with extension swapped to
/// ".raw".
pub fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn encode_header(dims: Dims, dtype: Dtype) -> Vec<u8> {
    let h = HeaderJson {
        dims: [dims.nx as u32, dims.ny as u32, dims.nz as u32],
        dtype,
        order: "x-fastest".to_string(),
    };
    let mut out = serde_json::to_vec_pretty(&h).expect("header serializes");
    out.push(b'\n');
    out
}

fn load_volume_parts(path: &Path) -> Result<(VolumeHeader, Vec<u8>)> {
    let header = parse_volume_header(&path.display().to_string(), &read_file(path)?)?;
    let raw = read_file(&raw_path(path))?;
    Ok((header, raw))
}

pub fn load_gray_volume(path: &Path) -> Result<GrayVolume> {
    let (header, raw) = load_volume_parts(path)?;
    decode_gray(&path.display().to_string(), &header, &raw)
}

pub fn load_label_volume(path: &Path) -> Result<LabelVolume> {
    let (header, raw) = load_volume_parts(path)?;
    decode_labels(&path.display().to_string(), &header, &raw)
}

pub fn load_scalar_volume(path: &Path) -> Result<ScalarField> {
    let (header, raw) = load_volume_parts(path)?;
    decode_scalar(&path.display().to_string(), &header, &raw)
}

pub fn save_gray_volume(path: &Path, v: &GrayVolume) -> Result<()> {
    atomic_write(path, &encode_header(v.dims(), Dtype::U8))?;
    atomic_write(&raw_path(path), v.data())
}

pub fn save_label_volume(path: &Path, v: &LabelVolume) -> Result<()> {
    atomic_write(path, &encode_header(v.dims(), Dtype::U32))?;
    let mut raw = Vec::with_capacity(v.data().len() * 4);
    for &x in v.data() {
        raw.extend_from_slice(&x.to_le_bytes());
    }
    atomic_write(&raw_path(path), &raw)
}

pub fn save_scalar_volume(path: &Path, v: &ScalarField) -> Result<()> {
    atomic_write(path, &encode_header(v.dims(), Dtype::F32))?;
    let mut raw = Vec::with_capacity(v.data().len() * 4);
    for &x in v.data() {
        raw.extend_from_slice(&(x as f32).to_le_bytes());
    }
    atomic_write(&raw_path(path), &raw)
}

// ---------------------------------------------------------------------------
// T-bar prediction lists.

#[derive(Serialize, Deserialize)]
struct TbarFileJson {
    tbars: Vec<TbarPrediction>,
}

pub fn parse_tbars(name: &str, bytes: &[u8]) -> Result<Vec<TbarPrediction>> {
    let f: TbarFileJson =
        serde_json::from_slice(bytes).map_err(|e| format_err(name, e.to_string()))?;
    for t in &f.tbars {
        if !t.confidence.is_finite() || !(0.0..=1.0).contains(&t.confidence) {
            return Err(format_err(
                name,
                format!("field \"confidence\": {} not in [0, 1]", t.confidence),
            ));
        }
    }
    Ok(f.tbars)
}

/// Serializes sorted by descending confidence (ties by (z, y, x)).
pub fn encode_tbars(tbars: &[TbarPrediction]) -> Vec<u8> {
    let mut sorted = tbars.to_vec();
    sorted.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.pos.zyx().cmp(&b.pos.zyx()))
    });
    let mut out = serde_json::to_vec_pretty(&TbarFileJson { tbars: sorted }).expect("serializes");
    out.push(b'\n');
    out
}

pub fn load_tbars(path: &Path) -> Result<Vec<TbarPrediction>> {
    parse_tbars(&path.display().to_string(), &read_file(path)?)
}

pub fn save_tbars(path: &Path, tbars: &[TbarPrediction]) -> Result<()> {
    atomic_write(path, &encode_tbars(tbars))
}

// ---------------------------------------------------------------------------
// Synapse sets. Predicted files always carry partner bodies; ground-truth
// files may instead carry a point annotation per partner.

#[derive(Serialize, Deserialize)]
struct PartnerJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    body: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos: Option<Point3>,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct SynapseJson {
    tbar: TbarPrediction,
    partners: Vec<PartnerJson>,
}

#[derive(Serialize, Deserialize)]
struct SynapseFileJson {
    synapses: Vec<SynapseJson>,
}

pub fn parse_raw_synapses(name: &str, bytes: &[u8]) -> Result<Vec<RawSynapse>> {
    let f: SynapseFileJson =
        serde_json::from_slice(bytes).map_err(|e| format_err(name, e.to_string()))?;
    let mut out = Vec::with_capacity(f.synapses.len());
    for s in f.synapses {
        if !s.tbar.confidence.is_finite() || !(0.0..=1.0).contains(&s.tbar.confidence) {
            return Err(format_err(
                name,
                format!("field \"tbar.confidence\": {} not in [0, 1]", s.tbar.confidence),
            ));
        }
        let mut partners = Vec::with_capacity(s.partners.len());
        for p in s.partners {
            if p.body.is_none() && p.pos.is_none() {
                return Err(format_err(
                    name,
                    "partner: needs a \"body\" or a \"pos\" field",
                ));
            }
            if p.body == Some(0) {
                return Err(format_err(name, "field \"body\": must be nonzero"));
            }
            if !p.confidence.is_finite() || !(0.0..=1.0).contains(&p.confidence) {
                return Err(format_err(
                    name,
                    format!("field \"confidence\": {} not in [0, 1]", p.confidence),
                ));
            }
            partners.push(RawPartner {
                body: p.body,
                pos: p.pos,
                confidence: p.confidence,
            });
        }
        out.push(RawSynapse {
            tbar: s.tbar,
            partners,
        });
    }
    Ok(out)
}

/// Parses a fully body-resolved synapse set (predicted-partner files).
pub fn parse_synapse_set(name: &str, bytes: &[u8]) -> Result<SynapseSet> {
    let raw = parse_raw_synapses(name, bytes)?;
    let mut synapses = Vec::with_capacity(raw.len());
    for s in raw {
        let partners = s
            .partners
            .into_iter()
            .map(|p| {
                p.body
                    .map(|body| crate::psd::PartnerPrediction {
                        body,
                        confidence: p.confidence,
                    })
                    .ok_or_else(|| format_err(name, "partner: missing \"body\" field"))
            })
            .collect::<Result<Vec<_>>>()?;
        synapses.push(crate::psd::SynapseEntry {
            tbar: s.tbar,
            partners,
        });
    }
    let set = SynapseSet { synapses };
    set.validate()
        .map_err(|e| format_err(name, e.to_string()))?;
    Ok(set)
}

pub fn encode_synapse_set(set: &SynapseSet) -> Vec<u8> {
    let f = SynapseFileJson {
        synapses: set
            .synapses
            .iter()
            .map(|s| SynapseJson {
                tbar: s.tbar,
                partners: s
                    .partners
                    .iter()
                    .map(|p| PartnerJson {
                        body: Some(p.body),
                        pos: None,
                        confidence: p.confidence,
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&f).expect("serializes");
    out.push(b'\n');
    out
}

pub fn load_raw_synapses(path: &Path) -> Result<Vec<RawSynapse>> {
    parse_raw_synapses(&path.display().to_string(), &read_file(path)?)
}

pub fn load_synapse_set(path: &Path) -> Result<SynapseSet> {
    parse_synapse_set(&path.display().to_string(), &read_file(path)?)
}

pub fn save_synapse_set(path: &Path, set: &SynapseSet) -> Result<()> {
    atomic_write(path, &encode_synapse_set(set))
}

// ---------------------------------------------------------------------------
// Graph CSV: "pre,post,weight" (directed) or "a,b,weight" (undirected),
// ascending key order.

pub fn parse_graph_csv(name: &str, bytes: &[u8]) -> Result<ConnectomeGraph> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| format_err(name, "not valid UTF-8"))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| format_err(name, "empty file; expected a header line"))?;
    if header.1 != "pre,post,weight" && header.1 != "a,b,weight" {
        return Err(format_err(
            name,
            format!("line 1: expected header \"pre,post,weight\" or \"a,b,weight\", got {:?}", header.1),
        ));
    }
    let field_names: Vec<&str> = header.1.split(',').collect();
    let mut graph = ConnectomeGraph::default();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(format_err(
                name,
                format!("line {}: expected 3 fields, got {}", i + 1, cols.len()),
            ));
        }
        let field = |k: usize| -> Result<u64> {
            cols[k].parse().map_err(|_| {
                format_err(
                    name,
                    format!(
                        "line {}: field \"{}\": {:?} is not a non-negative integer",
                        i + 1,
                        field_names[k],
                        cols[k]
                    ),
                )
            })
        };
        let (pre, post, weight) = (field(0)?, field(1)?, field(2)?);
        let check_id = |k: usize, v: u64| -> Result<u32> {
            if v == 0 || v > u32::MAX as u64 {
                return Err(format_err(
                    name,
                    format!("line {}: field \"{}\": body id {} out of range", i + 1, field_names[k], v),
                ));
            }
            Ok(v as u32)
        };
        let (pre, post) = (check_id(0, pre)?, check_id(1, post)?);
        if weight == 0 {
            return Err(format_err(
                name,
                format!("line {}: field \"{}\": weight must be >= 1", i + 1, field_names[2]),
            ));
        }
        if graph.edges.insert((pre, post), weight).is_some() {
            return Err(format_err(
                name,
                format!("line {}: duplicate edge ({pre}, {post})", i + 1),
            ));
        }
    }
    Ok(graph)
}

pub fn encode_graph_csv(graph: &ConnectomeGraph, undirected: bool) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(if undirected { "a,b,weight\n" } else { "pre,post,weight\n" });
    for (&(pre, post), &w) in &graph.edges {
        out.push_str(&format!("{pre},{post},{w}\n"));
    }
    out.into_bytes()
}

pub fn load_graph_csv(path: &Path) -> Result<ConnectomeGraph> {
    parse_graph_csv(&path.display().to_string(), &read_file(path)?)
}

pub fn save_graph_csv(path: &Path, graph: &ConnectomeGraph, undirected: bool) -> Result<()> {
    atomic_write(path, &encode_graph_csv(graph, undirected))
}

// ---------------------------------------------------------------------------
// Metric CSVs (write-only; undefined precision/recall becomes an empty field).

pub fn encode_pr_csv(curve: &PrCurve) -> Vec<u8> {
    let mut out = String::from("threshold,precision,recall,tp,fp,fn\n");
    for p in &curve.points {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.threshold,
            opt(p.precision),
            opt(p.recall),
            p.tp,
            p.fp,
            p.fn_
        ));
    }
    out.into_bytes()
}

pub fn save_pr_csv(path: &Path, curve: &PrCurve) -> Result<()> {
    atomic_write(path, &encode_pr_csv(curve))
}

pub fn encode_added_missed_csv(am: &AddedMissed) -> Vec<u8> {
    let mut out = String::from("kind,pre,post\n");
    for &(pre, post) in &am.added {
        out.push_str(&format!("added,{pre},{post}\n"));
    }
    for &(pre, post) in &am.missed {
        out.push_str(&format!("missed,{pre},{post}\n"));
    }
    out.push_str(&format!("normalizer,{}\n", am.normalizer));
    out.into_bytes()
}

pub fn save_added_missed_csv(path: &Path, am: &AddedMissed) -> Result<()> {
    atomic_write(path, &encode_added_missed_csv(am))
}

pub fn encode_scatter_csv(records: &[ScatterRecord]) -> Vec<u8> {
    let mut out = String::from("pre,post,gt_weight,pred_weight,within_band\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.pre, r.post, r.gt_weight, r.pred_weight, r.within_band
        ));
    }
    out.into_bytes()
}

pub fn save_scatter_csv(path: &Path, records: &[ScatterRecord]) -> Result<()> {
    atomic_write(path, &encode_scatter_csv(records))
}

// ---------------------------------------------------------------------------
// MLP models.

pub fn parse_model(name: &str, bytes: &[u8]) -> Result<MlpModel> {
    let model: MlpModel =
        serde_json::from_slice(bytes).map_err(|e| format_err(name, e.to_string()))?;
    model
        .validate()
        .map_err(|e| format_err(name, e.to_string()))?;
    Ok(model)
}

pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(model).expect("serializes");
    out.push(b'\n');
    out
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    parse_model(&path.display().to_string(), &read_file(path)?)
}

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    atomic_write(path, &encode_model(model))
}
