//! Dataset file set: `concepts.json`, `pool.csv`, optional `test.csv` and
//! optional `meta.json`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PoolInstance, TaskDataset};
use crate::domain::Concept;
use crate::error::{Error, Result};
use crate::fsio::{read_to_string, write_atomic};

const CONCEPTS_FILE: &str = "concepts.json";
const POOL_FILE: &str = "pool.csv";
const TEST_FILE: &str = "test.csv";
const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct ConceptsDoc {
    v: u32,
    concepts: Vec<Concept>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MetaDoc {
    v: u32,
    m: usize,
    noise_sigma: Vec<f64>,
    #[serde(default)]
    phases: Option<usize>,
}

pub fn write_task(dir: &Path, dataset: &TaskDataset) -> Result<()> {
    dataset.validate()?;
    let concepts = ConceptsDoc {
        v: 1,
        concepts: dataset.concepts.clone(),
    };
    write_atomic(&dir.join(CONCEPTS_FILE), &serde_json::to_vec_pretty(&concepts)?)?;
    let meta = MetaDoc {
        v: 1,
        m: dataset.feature_dim,
        noise_sigma: dataset.noise_sigma.clone(),
        phases: Some(dataset.phases),
    };
    write_atomic(&dir.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
    write_atomic(&dir.join(POOL_FILE), &instances_csv(dataset, &dataset.pool)?)?;
    if !dataset.test.is_empty() {
        write_atomic(&dir.join(TEST_FILE), &instances_csv(dataset, &dataset.test)?)?;
    }
    Ok(())
}

fn instances_csv(dataset: &TaskDataset, items: &[PoolInstance]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["instance_id".to_string(), "phase".into(), "concept_id".into()];
    header.extend((0..dataset.feature_dim).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for p in items {
        let labels: Vec<&str> = p.labels.iter().map(|&c| dataset.concepts[c].id.as_str()).collect();
        let mut row = vec![p.id.to_string(), p.phase.to_string(), labels.join(";")];
        row.extend(p.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))
}

pub fn load_task(dir: &Path) -> Result<TaskDataset> {
    let concepts: ConceptsDoc = serde_json::from_str(&read_to_string(&dir.join(CONCEPTS_FILE))?)
        .map_err(|e| Error::from(e).context(CONCEPTS_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta: Option<MetaDoc> = if meta_path.exists() {
        Some(serde_json::from_str(&read_to_string(&meta_path)?).map_err(|e| Error::from(e).context(META_FILE))?)
    } else {
        None
    };
    let concepts = concepts.concepts;
    let pool_text = read_to_string(&dir.join(POOL_FILE))?;
    let (dim, pool) = parse_instances(POOL_FILE, &pool_text, &concepts, meta.as_ref().map(|m| m.m))?;
    let test_path = dir.join(TEST_FILE);
    let test = if test_path.exists() {
        parse_instances(TEST_FILE, &read_to_string(&test_path)?, &concepts, Some(dim))?.1
    } else {
        Vec::new()
    };
    let observed_phases = pool.iter().chain(&test).map(|p| p.phase + 1).max().unwrap_or(1);
    let (noise_sigma, phases) = match meta {
        Some(m) => (m.noise_sigma, m.phases.unwrap_or(observed_phases)),
        None => (vec![0.0; dim], observed_phases),
    };
    let dataset = TaskDataset {
        concepts,
        feature_dim: dim,
        phases,
        noise_sigma,
        pool,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Parses one instance table. Row numbers in errors are file line numbers
/// (the header is line 1).
fn parse_instances(
    file: &str,
    text: &str,
    concepts: &[Concept],
    expected_dim: Option<usize>,
) -> Result<(usize, Vec<PoolInstance>)> {
    let row_err = |row: usize, message: String| Error::Row {
        file: file.to_string(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let fixed = ["instance_id", "phase", "concept_id"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(row_err(1, format!("column {} must be '{name}'", i + 1)));
        }
    }
    let dim = header.len() - fixed.len();
    for j in 0..dim {
        if header.get(j + fixed.len()) != Some(format!("f_{j}").as_str()) {
            return Err(row_err(1, format!("expected feature column f_{j}")));
        }
    }
    if dim == 0 {
        return Err(row_err(1, "no feature columns".into()));
    }
    if let Some(m) = expected_dim {
        if m != dim {
            return Err(row_err(1, format!("{dim} feature columns but the task declares {m}")));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(row_err(
                row,
                format!("has {} columns, expected {} (missing feature column?)", record.len(), header.len()),
            ));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| row_err(row, format!("bad instance_id '{}'", &record[0])))?;
        if !seen.insert(id) {
            return Err(row_err(row, format!("duplicate instance id {id}")));
        }
        let phase: usize = record[1]
            .parse()
            .map_err(|_| row_err(row, format!("bad phase '{}'", &record[1])))?;
        let mut labels = Vec::new();
        for name in record[2].split(';').map(str::trim) {
            let c = concepts
                .iter()
                .position(|c| c.id == name)
                .ok_or_else(|| row_err(row, format!("unknown concept id '{name}'")))?;
            if !labels.contains(&c) {
                labels.push(c);
            }
        }
        let features = (0..dim)
            .map(|j| {
                let raw = &record[j + fixed.len()];
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| row_err(row, format!("f_{j} is not a finite number: '{raw}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PoolInstance {
            id,
            phase,
            labels,
            features,
        });
    }
    if out.is_empty() {
        return Err(row_err(2, "table has no instances".into()));
    }
    Ok((dim, out))
}
