//! Dataset-on-disk format: one 8-bit binary PGM per study plus a metadata
//! CSV whose header is validated verbatim.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cohort::{Cohort, Study};
use crate::image::GrayImage;
use crate::labels::{Sex, StudyGrades};
use crate::DataError;

/// The only accepted metadata header.
pub const METADATA_HEADER: [&str; 12] = [
    "patient_id",
    "filename",
    "age",
    "sex",
    "cdm",
    "cng",
    "per",
    "pel",
    "pir",
    "pil",
    "alr",
    "all",
];

/// Metadata CSV filename inside a dataset directory.
pub const METADATA_FILENAME: &str = "metadata.csv";

/// Writes a binary (P5) PGM.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<(), DataError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
    out.write_all(image.data())?;
    Ok(())
}

/// Reads a binary (P5) PGM with maxval 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| DataError::MalformedPgm(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, DataError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::MalformedPgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(bad("not a binary PGM (missing P5 magic)"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(bad("raster shorter than declared dimensions"));
    }
    GrayImage::new(height, width, bytes[pos..pos + expected].to_vec())
        .ok_or_else(|| bad("empty dimensions"))
}

/// Writes every study image plus the metadata CSV into `dir`.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join(METADATA_FILENAME))?;
    writer.write_record(METADATA_HEADER)?;
    for study in &cohort.studies {
        write_pgm(&dir.join(&study.filename), &study.image)?;
        let grades = study.grades.as_strings();
        let mut record = vec![
            study.patient_id.clone(),
            study.filename.clone(),
            study.age.to_string(),
            study.sex.as_str().to_string(),
        ];
        record.extend(grades.iter().map(|s| s.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads a dataset directory, validating the metadata header verbatim.
pub fn load_cohort(dir: &Path) -> Result<Cohort, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(dir.join(METADATA_FILENAME))?;
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != METADATA_HEADER {
        return Err(DataError::HeaderMismatch {
            found: found.join(","),
        });
    }
    let mut studies = Vec::new();
    let mut image_size = None;
    for record in reader.records() {
        let record = record?;
        if record.len() != METADATA_HEADER.len() {
            return Err(DataError::HeaderMismatch {
                found: format!("row with {} fields", record.len()),
            });
        }
        let age: u32 = record[2]
            .parse()
            .map_err(|_| DataError::InvalidSpec(format!("bad age {:?}", &record[2])))?;
        let sex = Sex::parse(&record[3])?;
        let grade_strs: [&str; 8] = std::array::from_fn(|i| &record[4 + i]);
        let grades = StudyGrades::parse(&grade_strs)?;
        let image = read_pgm(&dir.join(&record[1]))?;
        if image.height() != image.width() {
            return Err(DataError::MalformedPgm(format!(
                "{}: expected a square image",
                &record[1]
            )));
        }
        match image_size {
            None => image_size = Some(image.height()),
            Some(s) if s == image.height() => {}
            Some(s) => {
                return Err(DataError::MalformedPgm(format!(
                    "{}: image size {} differs from the cohort's {s}",
                    &record[1],
                    image.height()
                )))
            }
        }
        studies.push(Study {
            patient_id: record[0].to_string(),
            filename: record[1].to_string(),
            image,
            age,
            sex,
            grades,
        });
    }
    let image_size = image_size.ok_or_else(|| DataError::InvalidSpec("empty dataset".into()))?;
    Ok(Cohort {
        studies,
        image_size,
    })
}
