//! Dataset catalogs backed by the on-disk layout
//!
//! ```text
//! <root>/labels.csv                       id,any,ivh,iph,sah,edh,sdh
//! <root>/slices/<study_id>_<slice_index>.arr
//! <root>/masks/<study_id>_<slice_index>.arr   (optional)
//! ```
//!
//! A long-format table (`id,subtype,flag`, one row per label) is also accepted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CategoricalLabel, CtSlice, SourceRef, Subtype};
use crate::arrays::{read_grid_f32, read_header, read_mask, write_array};
use crate::error::{Error, Result};

pub const LABEL_HEADER: [&str; 7] = ["id", "any", "ivh", "iph", "sah", "edh", "sdh"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelFormat {
    /// `id,any,ivh,iph,sah,edh,sdh`
    Wide,
    /// `id,subtype,flag`
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub source: SourceRef,
    pub labels: CategoricalLabel,
    pub slice_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

impl CatalogEntry {
    pub fn id(&self) -> String {
        self.source.id()
    }
}

/// Immutable index of labelled slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub root: PathBuf,
    pub entries: Vec<CatalogEntry>,
    /// Labelled ids whose slice file does not exist.
    pub missing: Vec<String>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.entries.iter().filter(|e| e.labels.any_ich).count()
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.id() == id)
    }

    pub fn load_slice(&self, entry: &CatalogEntry) -> Result<CtSlice> {
        let hu = read_grid_f32(&entry.slice_path)?;
        let gt_mask = match &entry.mask_path {
            Some(path) => Some(read_mask(path)?),
            None => None,
        };
        CtSlice::new(entry.source.clone(), hu, entry.labels, gt_mask)
    }

    pub fn load_all(&self) -> Result<Vec<CtSlice>> {
        self.entries.iter().map(|e| self.load_slice(e)).collect()
    }

    /// Sorted unique study identifiers.
    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.source.study_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

fn parse_flag(raw: &str, path: &Path, line: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column '{column}' must be 0 or 1, got '{other}'"),
        }),
    }
}

fn parse_labels(label_file: &Path) -> Result<Vec<(String, CategoricalLabel)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(label_file)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(label_file, io),
            other => Error::Data(format!("{}: {other:?}", label_file.display())),
        })?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Ok(Vec::new());
    }
    let format = if header.len() >= 7 && header[..7] == LABEL_HEADER {
        LabelFormat::Wide
    } else if header.len() >= 3 && header[..3] == ["id", "subtype", "flag"] {
        LabelFormat::Long
    } else {
        return Err(Error::Parse {
            path: label_file.to_path_buf(),
            line: 1,
            message: format!(
                "unrecognised header {:?}; expected '{}' or 'id,subtype,flag'",
                header,
                LABEL_HEADER.join(",")
            ),
        });
    };

    let mut order: Vec<String> = Vec::new();
    let mut long_rows: BTreeMap<String, (Option<bool>, [Option<bool>; 5])> = BTreeMap::new();
    let mut wide_rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            path: label_file.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let expected = if format == LabelFormat::Wide { 7 } else { 3 };
        if record.len() < expected {
            return Err(Error::Parse {
                path: label_file.to_path_buf(),
                line,
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if SourceRef::parse(&id).is_none() {
            return Err(Error::Parse {
                path: label_file.to_path_buf(),
                line,
                message: format!("id '{id}' is not '<study>_<slice_index>'"),
            });
        }
        match format {
            LabelFormat::Wide => {
                let any = parse_flag(&record[1], label_file, line, "any")?;
                let mut flags = [false; 5];
                for (k, flag) in flags.iter_mut().enumerate() {
                    *flag = parse_flag(&record[k + 2], label_file, line, LABEL_HEADER[k + 2])?;
                }
                wide_rows.push((
                    id,
                    CategoricalLabel {
                        any_ich: any,
                        subtypes: Some(flags),
                    },
                ));
            }
            LabelFormat::Long => {
                let flag = parse_flag(&record[2], label_file, line, "flag")?;
                let slot = long_rows.entry(id.clone()).or_insert_with(|| {
                    order.push(id.clone());
                    (None, [None; 5])
                });
                let name = record[1].trim().to_ascii_lowercase();
                if name == "any" {
                    slot.0 = Some(flag);
                } else if let Some(subtype) = Subtype::parse(&name) {
                    slot.1[subtype.index()] = Some(flag);
                } else {
                    return Err(Error::Parse {
                        path: label_file.to_path_buf(),
                        line,
                        message: format!("unknown subtype '{name}'"),
                    });
                }
            }
        }
    }
    if format == LabelFormat::Wide {
        return Ok(wide_rows);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let (any, flags) = long_rows[&id];
            let label = if flags.iter().all(Option::is_some) {
                let flags = flags.map(|f| f.unwrap_or(false));
                CategoricalLabel {
                    any_ich: any.unwrap_or_else(|| flags.iter().any(|&f| f)),
                    subtypes: Some(flags),
                }
            } else {
                CategoricalLabel::binary(any.unwrap_or(false))
            };
            (id, label)
        })
        .collect())
}

/// Reads a label table and resolves each id against `<root>/slices` and `<root>/masks`.
pub fn load_catalog(root: &Path, label_file: &Path) -> Result<Catalog> {
    let rows = parse_labels(label_file)?;
    let inconsistent: Vec<String> = rows
        .iter()
        .filter(|(_, label)| !label.is_consistent())
        .map(|(id, _)| id.clone())
        .collect();
    if !inconsistent.is_empty() {
        return Err(Error::Consistency { ids: inconsistent });
    }

    let mut catalog = Catalog {
        root: root.to_path_buf(),
        ..Default::default()
    };
    for (id, labels) in rows {
        let slice_path = root.join("slices").join(format!("{id}.arr"));
        if !slice_path.is_file() {
            catalog.missing.push(id);
            continue;
        }
        let mask_candidate = root.join("masks").join(format!("{id}.arr"));
        let mask_path = mask_candidate.is_file().then_some(mask_candidate);
        if let Some(mask) = &mask_path {
            let slice_shape = read_header(&slice_path)?.shape;
            let mask_shape = read_header(mask)?.shape;
            if slice_shape != mask_shape {
                return Err(Error::Data(format!(
                    "{id}: mask shape {mask_shape:?} differs from slice shape {slice_shape:?}"
                )));
            }
        }
        catalog.entries.push(CatalogEntry {
            source: SourceRef::parse(&id).expect("validated while parsing"),
            labels,
            slice_path,
            mask_path,
        });
    }
    if !catalog.missing.is_empty() {
        log::warn!(
            "{} labelled ids have no slice file under {}",
            catalog.missing.len(),
            root.display()
        );
    }
    Ok(catalog)
}

/// Writes slices, masks and `labels.csv` in the catalog layout and reloads the catalog.
pub fn write_dataset(root: &Path, slices: &[CtSlice]) -> Result<Catalog> {
    std::fs::create_dir_all(root.join("slices")).map_err(|e| Error::io(root, e))?;
    let label_path = root.join("labels.csv");
    let mut writer = csv::Writer::from_path(&label_path)?;
    writer.write_record(LABEL_HEADER)?;
    for slice in slices {
        let id = slice.id();
        write_array(&root.join("slices").join(format!("{id}.arr")), &slice.hu)?;
        if let Some(mask) = &slice.gt_mask {
            write_array(&root.join("masks").join(format!("{id}.arr")), mask)?;
        }
        let flags = slice.labels.subtypes.unwrap_or([false; 5]);
        let mut row = vec![id, u8::from(slice.labels.any_ich).to_string()];
        row.extend(flags.iter().map(|&f| u8::from(f).to_string()));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(&label_path, e))?;
    drop(writer);
    load_catalog(root, &label_path)
}
