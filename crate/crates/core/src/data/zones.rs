use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{check_header, csv_reader, csv_writer, line_of, parse_f64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneEntry {
    pub zone_id: String,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
}

/// Image id to zone assignment; each image maps to at most one zone.
pub type ZoneMap = IndexMap<String, ZoneEntry>;

pub fn load_zone_map(path: &Path) -> Result<ZoneMap> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, &["image_id", "zone_id", "lon", "lat"])?;
    let mut zones = ZoneMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let coord = |i: usize, name: &str| -> Result<Option<f64>> {
            if record[i].trim().is_empty() {
                Ok(None)
            } else {
                parse_f64(&record[i], line, name).map(Some)
            }
        };
        let entry = ZoneEntry {
            zone_id: record[1].to_string(),
            lon: coord(2, "lon")?,
            lat: coord(3, "lat")?,
        };
        if entry.zone_id.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty zone_id".into(),
            });
        }
        if zones.insert(record[0].to_string(), entry).is_some() {
            return Err(Error::DuplicateKey(record[0].to_string()));
        }
    }
    Ok(zones)
}

pub fn write_zone_map(path: &Path, zones: &ZoneMap) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer.write_record(["image_id", "zone_id", "lon", "lat"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (id, z) in zones {
        writer.write_record([id.as_str(), &z.zone_id, &fmt(z.lon), &fmt(z.lat)])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
