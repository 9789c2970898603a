use std::fs;
use std::path::Path;

use super::slide::read_slide;
use super::{DeckArchive, DeckError, DeckWarning, ImageAsset};

/// Writes every picture on a slide into `export_dir`, one file per
/// distinct content hash, and returns the assets in shape order.
pub fn extract_images(
    archive: &DeckArchive,
    slide_index: usize,
    export_dir: &Path,
) -> Result<(Vec<ImageAsset>, Vec<DeckWarning>), DeckError> {
    let count = archive.slide_count();
    if slide_index >= count {
        return Err(DeckError::SlideOutOfRange {
            index: slide_index,
            count,
        });
    }
    let parse = read_slide(archive, slide_index);
    let mut assets = parse.record.images;
    if assets.is_empty() {
        return Ok((assets, parse.warnings));
    }
    fs::create_dir_all(export_dir)?;
    for asset in &mut assets {
        let bytes = archive
            .part(&asset.media_path)
            .expect("read_slide only keeps resolvable media");
        let file_name = match Path::new(&asset.media_path).extension() {
            Some(ext) => format!("{}.{}", asset.content_hash, ext.to_string_lossy()),
            None => asset.content_hash.clone(),
        };
        let target = export_dir.join(file_name);
        // Identical bytes share one exported file.
        if !target.exists() {
            fs::write(&target, bytes)?;
        }
        asset.exported_path = Some(target.to_string_lossy().into_owned());
    }
    Ok((assets, parse.warnings))
}
