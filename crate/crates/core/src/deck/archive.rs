use std::collections::BTreeMap;
use std::io::{Cursor, Read};

use super::xml::{self, Element};
use super::DeckError;

pub(crate) const ZIP_MAGIC: &[u8] = b"PK\x03\x04";
const OLE_MAGIC: &[u8] = &[0xD0, 0xCF, 0x11, 0xE0, 0xA1, 0xB1, 0x1A, 0xE1];
const CONTENT_TYPES: &str = "[Content_Types].xml";
const DEFAULT_PRESENTATION: &str = "ppt/presentation.xml";

const REL_OFFICE_DOCUMENT: &str = "/officeDocument";
pub(crate) const REL_SLIDE: &str = "/slide";
pub(crate) const REL_SLIDE_LAYOUT: &str = "/slideLayout";
pub(crate) const REL_SLIDE_MASTER: &str = "/slideMaster";
pub(crate) const REL_NOTES_SLIDE: &str = "/notesSlide";

/// An opened presentation container with its slide parts resolved in
/// presentation order.
#[derive(Debug, Clone)]
pub struct DeckArchive {
    pub source_name: String,
    pub entries: BTreeMap<String, Vec<u8>>,
    slide_parts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Relationship {
    pub id: String,
    pub rel_type: String,
    /// Resolved container path; `None` for external targets.
    pub target: Option<String>,
}

impl Relationship {
    pub fn is(&self, suffix: &str) -> bool {
        self.rel_type.ends_with(suffix)
    }
}

impl DeckArchive {
    /// Slide part paths in presentation order.
    pub fn slide_parts(&self) -> &[String] {
        &self.slide_parts
    }

    pub fn slide_count(&self) -> usize {
        self.slide_parts.len()
    }

    pub fn part(&self, path: &str) -> Option<&[u8]> {
        self.entries.get(path).map(Vec::as_slice)
    }

    pub(crate) fn parse_part(&self, path: &str) -> Result<Element, String> {
        let bytes = self.part(path).ok_or_else(|| format!("missing part {path}"))?;
        xml::parse(bytes).map_err(|e| format!("{path}: {e}"))
    }

    /// Relationships of a part; an absent `.rels` file means none.
    pub(crate) fn relationships(&self, part: &str) -> Result<Vec<Relationship>, String> {
        let rels_path = rels_path_for(part);
        let Some(bytes) = self.part(&rels_path) else {
            return Ok(Vec::new());
        };
        let root = xml::parse(bytes).map_err(|e| format!("{rels_path}: {e}"))?;
        let base = parent_dir(part);
        Ok(root
            .children_named("Relationship")
            .filter_map(|rel| {
                let id = rel.attr("Id")?.to_string();
                let rel_type = rel.attr("Type").unwrap_or_default().to_string();
                let external = rel.attr("TargetMode") == Some("External");
                let target = match (external, rel.attr("Target")) {
                    (false, Some(t)) => Some(resolve_target(base, t)),
                    _ => None,
                };
                Some(Relationship { id, rel_type, target })
            })
            .collect())
    }
}

/// Validates the container and resolves the slide list.
pub fn open_deck(bytes: &[u8], source_name: &str) -> Result<DeckArchive, DeckError> {
    if bytes.starts_with(OLE_MAGIC) {
        return Err(DeckError::UnsupportedFormat(
            "legacy binary presentation; configure a converter".into(),
        ));
    }
    if !bytes.starts_with(ZIP_MAGIC) {
        return Err(DeckError::NotAnArchive);
    }
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| DeckError::CorruptContainer(e.to_string()))?;
    let mut entries = BTreeMap::new();
    for i in 0..zip.len() {
        let mut file = zip
            .by_index(i)
            .map_err(|e| DeckError::CorruptContainer(e.to_string()))?;
        if file.is_dir() {
            continue;
        }
        let name = file.name().trim_start_matches('/').to_string();
        let mut data = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut data)
            .map_err(|e| DeckError::CorruptContainer(format!("{name}: {e}")))?;
        entries.insert(name, data);
    }

    let mut archive = DeckArchive {
        source_name: source_name.to_string(),
        entries,
        slide_parts: Vec::new(),
    };
    if !archive.entries.contains_key(CONTENT_TYPES) {
        return Err(DeckError::NotAPresentation(format!("missing {CONTENT_TYPES}")));
    }
    let presentation = presentation_part(&archive)?;
    archive.slide_parts = resolve_slides(&archive, &presentation)?;
    Ok(archive)
}

fn presentation_part(archive: &DeckArchive) -> Result<String, DeckError> {
    let declared = archive
        .relationships("")
        .map_err(DeckError::CorruptContainer)?
        .into_iter()
        .find(|r| r.is(REL_OFFICE_DOCUMENT))
        .and_then(|r| r.target);
    let path = declared.unwrap_or_else(|| DEFAULT_PRESENTATION.to_string());
    if archive.entries.contains_key(&path) && path.ends_with("presentation.xml") {
        Ok(path)
    } else {
        Err(DeckError::NotAPresentation(format!("missing {path}")))
    }
}

fn resolve_slides(archive: &DeckArchive, presentation: &str) -> Result<Vec<String>, DeckError> {
    let root = archive.parse_part(presentation).map_err(DeckError::CorruptContainer)?;
    let rels = archive
        .relationships(presentation)
        .map_err(DeckError::CorruptContainer)?;
    let Some(list) = root.child("sldIdLst") else {
        return Ok(Vec::new());
    };
    let mut parts = Vec::new();
    for slide_id in list.children_named("sldId") {
        let rid = slide_id
            .ns_attr("id")
            .ok_or_else(|| DeckError::CorruptContainer("slide id without relationship".into()))?;
        let target = rels
            .iter()
            .find(|r| r.id == rid && r.is(REL_SLIDE))
            .and_then(|r| r.target.clone())
            .ok_or_else(|| DeckError::CorruptContainer(format!("dangling slide relationship {rid}")))?;
        if !archive.entries.contains_key(&target) {
            return Err(DeckError::CorruptContainer(format!("missing slide part {target}")));
        }
        parts.push(target);
    }
    Ok(parts)
}

fn parent_dir(part: &str) -> &str {
    part.rsplit_once('/').map(|(dir, _)| dir).unwrap_or("")
}

fn rels_path_for(part: &str) -> String {
    match part.rsplit_once('/') {
        Some((dir, file)) => format!("{dir}/_rels/{file}.rels"),
        None if part.is_empty() => "_rels/.rels".to_string(),
        None => format!("_rels/{part}.rels"),
    }
}

/// Resolves a relationship target against the directory of its source part.
pub(crate) fn resolve_target(base_dir: &str, target: &str) -> String {
    let mut segments: Vec<&str> = if target.starts_with('/') {
        Vec::new()
    } else {
        base_dir.split('/').filter(|s| !s.is_empty()).collect()
    };
    for segment in target.split('/') {
        match segment {
            "" | "." => {}
            ".." => {
                segments.pop();
            }
            s => segments.push(s),
        }
    }
    segments.join("/")
}
