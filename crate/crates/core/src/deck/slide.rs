//! Slide part walking: title, body blocks in reading order, notes and
//! picture references.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::archive::{DeckArchive, Relationship, REL_NOTES_SLIDE, REL_SLIDE_LAYOUT, REL_SLIDE_MASTER};
use super::xml::Element;
use super::{DeckWarning, ImageAsset, SlideRecord, TextBlock};
use crate::exec::Execution;

type Offset = (i64, i64);

#[derive(Debug, Clone, Default)]
struct Placeholder {
    kind: Option<String>,
    idx: Option<u32>,
}

impl Placeholder {
    fn read(nv_pr: Option<&Element>) -> Option<Self> {
        let ph = nv_pr?.child("ph")?;
        Some(Self {
            kind: ph.attr("type").map(str::to_string),
            idx: ph.attr("idx").and_then(|v| v.parse().ok()),
        })
    }

    fn is_title(&self) -> bool {
        matches!(self.kind.as_deref(), Some("title" | "ctrTitle"))
    }

    /// Body-like placeholders inherit bulleted paragraphs from the master.
    fn inherits_bullets(&self) -> bool {
        matches!(self.kind.as_deref(), None | Some("body" | "obj"))
    }

    /// The type a master-level placeholder would carry for this one.
    fn master_kind(&self) -> &str {
        match self.kind.as_deref() {
            None | Some("obj" | "subTitle") => "body",
            Some("ctrTitle") => "title",
            Some(other) => other,
        }
    }
}

/// Placeholder offsets inherited from a layout (and its master).
#[derive(Debug, Default)]
struct InheritedPositions {
    by_idx: HashMap<u32, Offset>,
    by_type: HashMap<String, Offset>,
    master_by_type: HashMap<String, Offset>,
}

impl InheritedPositions {
    fn lookup(&self, ph: &Placeholder) -> Option<Offset> {
        ph.idx
            .and_then(|idx| self.by_idx.get(&idx))
            .or_else(|| ph.kind.as_ref().and_then(|k| self.by_type.get(k)))
            .or_else(|| self.master_by_type.get(ph.master_kind()))
            .copied()
    }

    fn load(archive: &DeckArchive, slide_rels: &[Relationship]) -> Self {
        let mut positions = Self::default();
        let Some(layout) = find_target(slide_rels, REL_SLIDE_LAYOUT) else {
            return positions;
        };
        let master = archive
            .relationships(&layout)
            .ok()
            .and_then(|rels| find_target(&rels, REL_SLIDE_MASTER));
        if let Some(root) = master.and_then(|m| archive.parse_part(&m).ok()) {
            for (ph, offset) in placeholder_offsets(&root) {
                positions
                    .master_by_type
                    .entry(ph.master_kind().to_string())
                    .or_insert(offset);
            }
        }
        if let Ok(root) = archive.parse_part(&layout) {
            for (ph, offset) in placeholder_offsets(&root) {
                if let Some(idx) = ph.idx {
                    positions.by_idx.entry(idx).or_insert(offset);
                }
                if let Some(kind) = ph.kind {
                    positions.by_type.entry(kind).or_insert(offset);
                }
            }
        }
        positions
    }
}

fn find_target(rels: &[Relationship], suffix: &str) -> Option<String> {
    rels.iter().find(|r| r.is(suffix)).and_then(|r| r.target.clone())
}

fn placeholder_offsets(root: &Element) -> Vec<(Placeholder, Offset)> {
    let Some(tree) = root.path(&["cSld", "spTree"]) else {
        return Vec::new();
    };
    tree.children
        .iter()
        .filter_map(|shape| {
            let nv = shape.children.iter().find(|c| c.name.starts_with("nv"))?;
            let ph = Placeholder::read(nv.child("nvPr"))?;
            let offset = shape_offset(shape)?;
            Some((ph, offset))
        })
        .collect()
}

fn shape_offset(shape: &Element) -> Option<Offset> {
    let xfrm = match shape.name.as_str() {
        "graphicFrame" => shape.child("xfrm"),
        "grpSp" => shape.path(&["grpSpPr", "xfrm"]),
        _ => shape.path(&["spPr", "xfrm"]),
    }?;
    let off = xfrm.child("off")?;
    Some((off.attr("y")?.parse().ok()?, off.attr("x")?.parse().ok()?))
}

/// One sortable unit of a slide's shape tree. Groups are a single unit
/// whose children keep their document order.
#[derive(Debug, Default)]
struct Item {
    position: Option<Offset>,
    blocks: Vec<TextBlock>,
    pictures: Vec<String>,
}

#[derive(Debug, Default)]
pub(crate) struct ParsedSlide {
    pub title: Option<String>,
    pub blocks: Vec<TextBlock>,
    /// Relationship ids of pictures, in reading order.
    pub pictures: Vec<String>,
}

pub(crate) fn parse_slide(root: &Element, inherited: &InheritedPositionsHandle) -> ParsedSlide {
    let Some(tree) = root.path(&["cSld", "spTree"]) else {
        return ParsedSlide::default();
    };
    let mut title: Option<String> = None;
    let mut items = Vec::new();
    for shape in shapes_of(tree) {
        let ph = shape
            .children
            .iter()
            .find(|c| c.name.starts_with("nv"))
            .and_then(|nv| Placeholder::read(nv.child("nvPr")));
        if title.is_none() && ph.as_ref().is_some_and(Placeholder::is_title) {
            let text = shape
                .child("txBody")
                .map(|body| {
                    paragraphs(body)
                        .map(|(text, _, _)| text)
                        .filter(|t| !t.trim().is_empty())
                        .collect::<Vec<_>>()
                        .join("\n")
                })
                .unwrap_or_default();
            if !text.trim().is_empty() {
                title = Some(text);
            }
            continue;
        }
        let position = shape_offset(shape).or_else(|| {
            ph.as_ref()
                .and_then(|ph| inherited.0.as_ref().and_then(|p| p.lookup(ph)))
        });
        let mut item = Item {
            position,
            ..Item::default()
        };
        collect(shape, ph.as_ref(), &mut item);
        if !item.blocks.is_empty() || !item.pictures.is_empty() {
            items.push(item);
        }
    }
    // Stable sort keeps document order among shapes at the same spot;
    // shapes with no resolvable position go last.
    items.sort_by_key(|item| item.position.unwrap_or((i64::MAX, i64::MAX)));
    let mut parsed = ParsedSlide {
        title,
        ..ParsedSlide::default()
    };
    for item in items {
        parsed.blocks.extend(item.blocks);
        parsed.pictures.extend(item.pictures);
    }
    parsed
}

/// Wraps optional layout positions so callers without a layout can pass `None`.
pub(crate) struct InheritedPositionsHandle(Option<InheritedPositions>);

/// Shape children of a tree, unwrapping markup-compatibility blocks.
fn shapes_of(tree: &Element) -> Vec<&Element> {
    let mut out = Vec::new();
    for child in &tree.children {
        match child.name.as_str() {
            "sp" | "pic" | "graphicFrame" | "grpSp" => out.push(child),
            "AlternateContent" => {
                let branch = child.child("Fallback").or_else(|| child.child("Choice"));
                if let Some(branch) = branch {
                    out.extend(shapes_of(branch));
                }
            }
            _ => {}
        }
    }
    out
}

fn collect(shape: &Element, ph: Option<&Placeholder>, item: &mut Item) {
    match shape.name.as_str() {
        "sp" => {
            if let Some(body) = shape.child("txBody") {
                let inherit = ph.is_some_and(Placeholder::inherits_bullets);
                push_paragraphs(body, inherit, &mut item.blocks);
            }
        }
        "pic" => {
            if let Some(rid) = shape.path(&["blipFill", "blip"]).and_then(|b| b.ns_attr("embed")) {
                item.pictures.push(rid.to_string());
            }
        }
        "graphicFrame" => {
            if let Some(table) = shape.find("tbl") {
                for row in table.children_named("tr") {
                    for cell in row.children_named("tc") {
                        if let Some(body) = cell.child("txBody") {
                            push_paragraphs(body, false, &mut item.blocks);
                        }
                    }
                }
            }
        }
        "grpSp" => {
            for child in shapes_of(shape) {
                let child_ph = child
                    .children
                    .iter()
                    .find(|c| c.name.starts_with("nv"))
                    .and_then(|nv| Placeholder::read(nv.child("nvPr")));
                collect(child, child_ph.as_ref(), item);
            }
        }
        _ => {}
    }
}

fn push_paragraphs(body: &Element, inherit_bullets: bool, out: &mut Vec<TextBlock>) {
    for (text, level, bullet) in paragraphs(body) {
        if text.trim().is_empty() {
            continue;
        }
        out.push(TextBlock {
            text,
            level,
            is_bullet: bullet.unwrap_or(inherit_bullets),
        });
    }
}

/// Yields (text, level, explicit bullet flag) for each `a:p`.
fn paragraphs(body: &Element) -> impl Iterator<Item = (String, u32, Option<bool>)> + '_ {
    body.children_named("p").map(|p| {
        let props = p.child("pPr");
        let level = props
            .and_then(|pr| pr.attr("lvl"))
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let bullet = props.and_then(|pr| {
            pr.children.iter().find_map(|c| match c.name.as_str() {
                "buNone" => Some(false),
                "buChar" | "buAutoNum" | "buBlip" => Some(true),
                _ => None,
            })
        });
        let mut text = String::new();
        for run in &p.children {
            match run.name.as_str() {
                "r" | "fld" => {
                    if let Some(t) = run.child("t") {
                        text.push_str(&t.text);
                    }
                }
                "br" => text.push('\n'),
                _ => {}
            }
        }
        (text, level, bullet)
    })
}

fn notes_text(root: &Element) -> Option<String> {
    let tree = root.path(&["cSld", "spTree"])?;
    let mut lines = Vec::new();
    for shape in shapes_of(tree) {
        let ph = shape.child("nvSpPr").and_then(|nv| Placeholder::read(nv.child("nvPr")));
        if ph.and_then(|p| p.kind).as_deref() != Some("body") {
            continue;
        }
        if let Some(body) = shape.child("txBody") {
            lines.extend(
                paragraphs(body)
                    .map(|(text, _, _)| text)
                    .filter(|t| !t.trim().is_empty()),
            );
        }
    }
    let joined = lines.join("\n");
    (!joined.trim().is_empty()).then_some(joined)
}

pub(crate) fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) struct SlideParse {
    pub record: SlideRecord,
    pub warnings: Vec<DeckWarning>,
}

pub(crate) fn read_slide(archive: &DeckArchive, index: usize) -> SlideParse {
    let part = &archive.slide_parts()[index];
    let mut warnings = Vec::new();
    let warn = |warnings: &mut Vec<DeckWarning>, message: String| {
        tracing::warn!(slide = index, "{message}");
        warnings.push(DeckWarning {
            slide_index: Some(index),
            message,
        });
    };
    let empty = |warnings| SlideParse {
        record: SlideRecord::empty(index),
        warnings,
    };

    let rels = match archive.relationships(part) {
        Ok(rels) => rels,
        Err(e) => {
            warn(&mut warnings, format!("corrupt slide relationships: {e}"));
            return empty(warnings);
        }
    };
    let root = match archive.parse_part(part) {
        Ok(root) => root,
        Err(e) => {
            warn(&mut warnings, format!("corrupt slide xml: {e}"));
            return empty(warnings);
        }
    };
    let inherited = InheritedPositionsHandle(Some(InheritedPositions::load(archive, &rels)));
    let parsed = parse_slide(&root, &inherited);

    let notes = match find_target(&rels, REL_NOTES_SLIDE) {
        Some(notes_part) => match archive.parse_part(&notes_part) {
            Ok(notes_root) => notes_text(&notes_root),
            Err(e) => {
                warn(&mut warnings, format!("unreadable notes: {e}"));
                None
            }
        },
        None => None,
    };

    let mut images = Vec::new();
    for rid in &parsed.pictures {
        let target = rels.iter().find(|r| &r.id == rid).and_then(|r| r.target.clone());
        let Some(media_path) = target.filter(|t| archive.part(t).is_some()) else {
            warn(&mut warnings, format!("missing media part for picture {rid}"));
            continue;
        };
        let bytes = archive.part(&media_path).unwrap_or_default();
        images.push(ImageAsset {
            id: format!("s{index}-img{}", images.len()),
            slide_index: index,
            media_path,
            content_hash: content_hash(bytes),
            exported_path: None,
            ocr_text: String::new(),
        });
    }

    let mut record = SlideRecord {
        index,
        title: parsed.title,
        body_blocks: parsed.blocks,
        notes,
        images,
        raw_text: String::new(),
        ocr_text: String::new(),
    };
    record.raw_text = record.compose_raw_text();
    SlideParse { record, warnings }
}

/// One record per slide part, in presentation order. Unparseable slides
/// yield an empty record plus a warning.
pub fn extract_slides(archive: &DeckArchive) -> (Vec<SlideRecord>, Vec<DeckWarning>) {
    extract_slides_with(archive, Execution::default())
}

pub fn extract_slides_with(archive: &DeckArchive, exec: Execution) -> (Vec<SlideRecord>, Vec<DeckWarning>) {
    let indices: Vec<usize> = (0..archive.slide_count()).collect();
    let parses = exec.map(&indices, |&i| read_slide(archive, i));
    let mut slides = Vec::with_capacity(parses.len());
    let mut warnings = Vec::new();
    for parse in parses {
        slides.push(parse.record);
        warnings.extend(parse.warnings);
    }
    (slides, warnings)
}
