//! On-disk formats.
//!
//! - `DASB1`: strain matrices: magic `DASB`, version byte, u32 SP
//!   count, u64 sample count, f64 sampling rate, row-major LE f32
//!   samples.
//! - annotations: JSON Lines, one event per line.
//! - `FSEQ1`: one feature matrix + labels: magic `FSEQ`, version
//!   byte, u32 JSON-header length, header, row-major LE f64 features,
//!   one label byte per frame.
//! - `MDL1`: checkpoints: magic `MDL1`, u32 JSON-header length,
//!   header (spec + tensor layout + init seed), LE f32 tensors.
//!
//! CSV writers use fixed float formatting so identical runs produce
//! byte-identical artifacts.

use crate::dsp::WindowGrid;
use crate::eval::{ConfusionMatrix, MetricsRow};
use crate::features::{FeatureSequence, FeatureStore, FEATURE_LAYOUT};
use crate::layers::{compose, Model, ModelSpec};
use crate::sim::{EventAnnotation, EventClass, StrainMatrix};
use crate::train::TrialRecord;
use crate::{DasError, Result};
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

fn open_out(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

// ---- DASB1 ----------------------------------------------------------------

pub fn write_strain(path: &Path, m: &StrainMatrix) -> Result<()> {
    let mut w = open_out(path)?;
    w.write_all(b"DASB")?;
    w.write_all(&[1u8])?;
    w.write_all(&(m.num_sps() as u32).to_le_bytes())?;
    w.write_all(&(m.num_samples() as u64).to_le_bytes())?;
    w.write_all(&m.fs.to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.num_samples() * 4);
    for row in m.data.rows() {
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_strain(path: &Path) -> Result<StrainMatrix> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"DASB" {
        return Err(DasError::Format(format!(
            "{}: bad magic (not a DASB1 file)",
            path.display()
        )));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != 1 {
        return Err(DasError::Format(format!(
            "unsupported DASB version {}",
            version[0]
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let s = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let t = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let fs = f64::from_le_bytes(b8);
    if s == 0 || t == 0 || !(fs > 0.0) {
        return Err(DasError::Format("degenerate DASB header".into()));
    }
    let mut raw = vec![0u8; s * t * 4];
    r.read_exact(&mut raw)?;
    let mut data = Array2::zeros((s, t));
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        data[[i / t, i % t]] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(StrainMatrix {
        data,
        fs,
        sp_ids: (0..s).collect(),
    })
}

// ---- annotations (JSON Lines) ----------------------------------------------

pub fn write_annotations(path: &Path, annotations: &[EventAnnotation]) -> Result<()> {
    let mut w = open_out(path)?;
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<EventAnnotation>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: EventAnnotation = serde_json::from_str(line).map_err(|e| {
            DasError::Format(format!("{}:{}: {e}", path.display(), ln + 1))
        })?;
        out.push(a);
    }
    Ok(out)
}

// ---- FSEQ1 ------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct FseqHeader {
    segment_id: usize,
    sp: usize,
    t: usize,
    d: usize,
    layout: Vec<String>,
    classes: Vec<String>,
}

/// Write one feature matrix + labels. `layout` is recorded verbatim in
/// the header (base-36 column names repeat for derivative blocks).
pub fn write_fseq(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let (t, d) = seq.features.dim();
    let header = FseqHeader {
        segment_id: seq.segment_id,
        sp: seq.sp,
        t,
        d,
        layout: FEATURE_LAYOUT.iter().map(|s| s.to_string()).collect(),
        classes: EventClass::ALL.iter().map(|c| c.name().to_string()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = open_out(path)?;
    w.write_all(b"FSEQ")?;
    w.write_all(&[1u8])?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for &v in seq.features.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    let labels: Vec<u8> = seq.labels.iter().map(|l| l.index() as u8).collect();
    w.write_all(&labels)?;
    w.flush()?;
    Ok(())
}

pub fn read_fseq(path: &Path) -> Result<FeatureSequence> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"FSEQ" {
        return Err(DasError::Format(format!(
            "{}: bad magic (not an FSEQ1 file)",
            path.display()
        )));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != 1 {
        return Err(DasError::Format(format!(
            "unsupported FSEQ version {}",
            version[0]
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let hlen = u32::from_le_bytes(b4) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: FseqHeader = serde_json::from_slice(&hbuf)?;
    let mut raw = vec![0u8; header.t * header.d * 8];
    r.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let features = Array2::from_shape_vec((header.t, header.d), values)
        .map_err(|e| DasError::Format(format!("bad FSEQ shape: {e}")))?;
    let mut lraw = vec![0u8; header.t];
    r.read_exact(&mut lraw)?;
    let labels = lraw
        .iter()
        .map(|&b| {
            EventClass::from_index(b as usize)
                .ok_or_else(|| DasError::Format(format!("bad label byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSequence {
        segment_id: header.segment_id,
        sp: header.sp,
        features,
        labels,
    })
}

// ---- feature store (directory of per-SP FSEQ1 + manifest) -------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct StoreManifest {
    site: String,
    grid: WindowGrid,
    num_sps: usize,
    num_frames: usize,
    files: Vec<String>,
}

/// Persist per-SP base features under `dir` (one FSEQ1 per SP plus a
/// `store.json` manifest).
pub fn write_store(dir: &Path, store: &FeatureStore) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (sp, features) in store.sp_features.iter().enumerate() {
        let name = format!("sp{sp:03}.fseq");
        let seq = FeatureSequence {
            segment_id: 0,
            sp,
            features: features.clone(),
            labels: store.labels.clone(),
        };
        write_fseq(&dir.join(&name), &seq)?;
        files.push(name);
    }
    let manifest = StoreManifest {
        site: store.site.clone(),
        grid: store.grid.clone(),
        num_sps: store.num_sps(),
        num_frames: store.num_frames(),
        files,
    };
    let mut w = open_out(&dir.join("store.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_store(dir: &Path) -> Result<FeatureStore> {
    let text = std::fs::read_to_string(dir.join("store.json"))?;
    let manifest: StoreManifest = serde_json::from_str(&text)?;
    let mut sp_features = Vec::with_capacity(manifest.num_sps);
    let mut labels = None;
    for name in &manifest.files {
        let seq = read_fseq(&dir.join(name))?;
        match &labels {
            None => labels = Some(seq.labels),
            Some(l) => {
                if *l != seq.labels {
                    return Err(DasError::Format(format!(
                        "{name}: labels disagree across SP files"
                    )));
                }
            }
        }
        sp_features.push(seq.features);
    }
    Ok(FeatureStore {
        site: manifest.site,
        grid: manifest.grid,
        sp_features,
        labels: labels.ok_or_else(|| DasError::Format("store has no SP files".into()))?,
    })
}

// ---- MDL1 checkpoints --------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelHeader {
    spec: ModelSpec,
    init_seed: u64,
    layout: Vec<TensorInfo>,
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    let header = ModelHeader {
        spec: model.spec.clone(),
        init_seed: model.init_seed,
        layout: model
            .params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = open_out(path)?;
    w.write_all(b"MDL1")?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in &model.params {
        for &v in p.value.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"MDL1" {
        return Err(DasError::Format(format!(
            "{}: bad magic (not an MDL1 file)",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let hlen = u32::from_le_bytes(b4) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: ModelHeader = serde_json::from_slice(&hbuf)?;

    let mut model = compose(&header.spec, header.init_seed)?;
    if model.params.len() != header.layout.len() {
        return Err(DasError::Format(format!(
            "checkpoint lists {} tensors, spec composes {}",
            header.layout.len(),
            model.params.len()
        )));
    }
    for (param, info) in model.params.iter_mut().zip(&header.layout) {
        if param.name != info.name
            || param.value.nrows() != info.rows
            || param.value.ncols() != info.cols
        {
            return Err(DasError::Format(format!(
                "checkpoint tensor {} ({}x{}) does not match composed {} ({}x{})",
                info.name,
                info.rows,
                info.cols,
                param.name,
                param.value.nrows(),
                param.value.ncols()
            )));
        }
        let mut raw = vec![0u8; info.rows * info.cols * 4];
        r.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        param.value = Array2::from_shape_vec((info.rows, info.cols), values)
            .map_err(|e| DasError::Format(format!("bad tensor shape: {e}")))?;
    }
    Ok(model)
}

// ---- CSV writers --------------------------------------------------------------

/// Base-feature CSV for external projection tools: one row per frame,
/// 36 columns plus the label name.
pub fn features_csv(store: &FeatureStore, sp: usize) -> Result<String> {
    if sp >= store.num_sps() {
        return Err(DasError::Config(format!(
            "SP {sp} out of range ({} SPs)",
            store.num_sps()
        )));
    }
    let mut out = String::new();
    out.push_str(&FEATURE_LAYOUT.join(","));
    out.push_str(",label\n");
    let m = &store.sp_features[sp];
    for (row, label) in m.rows().into_iter().zip(&store.labels) {
        let mut first = true;
        for &v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v:.6e}"));
            first = false;
        }
        out.push(',');
        out.push_str(label.name());
        out.push('\n');
    }
    Ok(out)
}

/// Ablation report CSV shaped like the comparison tables: one row per
/// model × feature set.
pub fn ablation_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "Model,Features,Acc,StdAcc,F1,StdF1,MacroF1,#Param,#ParamM,RI-Acc,RPI\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{},{:.2},{:.2},{:.2}\n",
            r.model,
            r.feature_set,
            r.acc,
            r.std_acc,
            r.f1,
            r.std_f1,
            r.macro_f1,
            r.params,
            r.params_m(),
            r.ri_acc,
            r.rpi
        ));
    }
    out
}

/// Trial ledger CSV: one row per search trial.
pub fn trials_csv(trials: &[(String, String, TrialRecord)]) -> String {
    let mut out = String::from(
        "model,features,trial,lr,layers,hidden,dropout,l2,mean_acc,std_acc,mean_f1,std_f1,params\n",
    );
    for (model, set, r) in trials {
        out.push_str(&format!(
            "{},{},{},{:.6e},{},{},{:.4},{:.6e},{:.4},{:.4},{:.4},{:.4},{}\n",
            model,
            set,
            r.trial,
            r.lr,
            r.layers,
            r.hidden,
            r.dropout,
            r.l2,
            r.mean_acc,
            r.std_acc,
            r.mean_f1,
            r.std_f1,
            r.params
        ));
    }
    out
}

/// 3×3 confusion matrix as CSV with named rows/columns.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\pred,Noise,Car,Bus\n");
    for (t, name) in EventClass::ALL.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            name.name(),
            cm.counts[t][0],
            cm.counts[t][1],
            cm.counts[t][2]
        ));
    }
    out
}
