//! CSV reading and writing for interaction logs and track metadata.

use std::collections::HashMap;
use std::path::Path;

use super::{Interaction, MoodDistribution, MOOD_DIM, MOOD_NAMES};
use crate::error::{Error, Result};

/// Interaction records with the name tables built while reading them.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTable {
    pub interactions: Vec<Interaction>,
    pub users: Vec<String>,
    pub tags: Vec<String>,
    pub music: Vec<String>,
}

/// One parsed metadata row; `music` indexes the shared track name table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaRow {
    pub music: usize,
    pub genre: String,
    pub year: i32,
    pub artist: String,
    pub mood: MoodDistribution,
}

#[derive(Default)]
struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    fn id(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if header.len() != expected.len() {
        return Err(Error::Format(format!(
            "{}: expected {} columns ({}), found {}",
            path.display(),
            expected.len(),
            expected.join(","),
            header.len()
        )));
    }
    Ok(())
}

fn field<'r>(path: &Path, line: u64, rec: &'r csv::StringRecord, i: usize, name: &str) -> Result<&'r str> {
    match rec.get(i) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(parse_err(path, line, format!("empty {name}"))),
    }
}

/// Read `user,emotion,music` rows. IDs are assigned in first-seen order.
pub fn load_interactions(path: &Path) -> Result<InteractionTable> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["user", "emotion", "music"])?;
    let (mut users, mut tags, mut music) = (Vocab::default(), Vocab::default(), Vocab::default());
    let mut interactions = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(Error::Format(format!(
                "{} line {line}: expected 3 columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        let u = field(path, line, &rec, 0, "user")?;
        let e = field(path, line, &rec, 1, "emotion tag")?;
        let v = field(path, line, &rec, 2, "music id")?;
        interactions.push(Interaction {
            user: users.id(u),
            emotion: tags.id(e),
            music: music.id(v),
        });
    }
    Ok(InteractionTable {
        interactions,
        users: users.names,
        tags: tags.names,
        music: music.names,
    })
}

/// Read `music,genre,year,artist,m1..m9` rows. Tracks not yet in
/// `music_names` are appended to it.
pub fn load_music_meta(path: &Path, music_names: &mut Vec<String>) -> Result<Vec<MetaRow>> {
    let mut rdr = reader(path)?;
    let mut expected = vec!["music", "genre", "year", "artist"];
    expected.extend(MOOD_NAMES.iter().copied());
    check_header(path, &mut rdr, &expected)?;
    let mut vocab = Vocab::from_names(std::mem::take(music_names));
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(Error::Format(format!(
                "{} line {line}: expected {} columns, found {}",
                path.display(),
                expected.len(),
                rec.len()
            )));
        }
        let music = vocab.id(field(path, line, &rec, 0, "music id")?);
        if !seen.insert(music) {
            return Err(parse_err(path, line, "duplicate track row"));
        }
        let genre = field(path, line, &rec, 1, "genre")?.to_string();
        let year = field(path, line, &rec, 2, "year")?
            .parse::<i32>()
            .map_err(|e| parse_err(path, line, format!("year: {e}")))?;
        let artist = field(path, line, &rec, 3, "artist")?.to_string();
        let mut p = [0.0; MOOD_DIM];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = field(path, line, &rec, 4 + k, MOOD_NAMES[k])?
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, format!("{}: {e}", MOOD_NAMES[k])))?;
        }
        let mood = MoodDistribution::new(p).map_err(|e| parse_err(path, line, e.to_string()))?;
        rows.push(MetaRow {
            music,
            genre,
            year,
            artist,
            mood,
        });
    }
    *music_names = vocab.names;
    Ok(rows)
}

pub fn write_interactions_csv(path: &Path, ds: &super::Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["user", "emotion", "music"]).map_err(csv_io)?;
    for r in &ds.interactions {
        w.write_record([
            ds.user_names[r.user].as_str(),
            ds.tag_names[r.emotion].as_str(),
            ds.music_names[r.music].as_str(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_music_csv(path: &Path, ds: &super::Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["music", "genre", "year", "artist"];
    header.extend(MOOD_NAMES.iter().copied());
    w.write_record(&header).map_err(csv_io)?;
    for (i, m) in ds.music.iter().enumerate() {
        let mut row = vec![
            ds.music_names[i].clone(),
            ds.genre_names[m.genre].clone(),
            m.year.to_string(),
            ds.artist_names[m.artist].clone(),
        ];
        // `{:?}` prints the shortest string that round-trips exactly.
        row.extend(m.mood.as_slice().iter().map(|x| format!("{x:?}")));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
