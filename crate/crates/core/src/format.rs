//! Streaming reader and writer for the counterfactual log format.
//!
//! Every line is one candidate:
//!
//! ```text
//! 17193693 |l 0.999 |p 11.324800021 |f 0:300 1:250 2:1
//! 17193693 |f 0:300 1:250 2:1 10:1
//! ```
//!
//! The leading integer is the candidate-set id; consecutive lines with the
//! same id form one [`CandidateSet`]. Exactly one line per set carries the
//! `|l` (label) and `|p` (propensity) sections: the candidate the logging
//! system displayed. A label of `0.001` marks a click, `0.999` no click.
//!
//! Input may be plain text or gzip; compression is detected from the magic
//! bytes by [`open_input`].

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

/// Label value of a clicked logged candidate.
pub const CLICKED_LABEL: f64 = 0.001;
/// Label value of a logged candidate that was not clicked.
pub const NOT_CLICKED_LABEL: f64 = 0.999;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Why a single line could not be parsed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("empty line")]
    Empty,
    #[error("invalid candidate set id {0:?}")]
    BadId(String),
    #[error("malformed feature token {0:?} (expected int:number)")]
    BadFeature(String),
    #[error("duplicate feature id {0}")]
    DuplicateFeature(u32),
    #[error("section |{section} expects one number, got {token:?}")]
    BadNumber { section: char, token: String },
    #[error("label {0:?} is neither 0.001 nor 0.999")]
    BadLabel(String),
    #[error("propensity {0:?} is not strictly positive")]
    NonPositivePropensity(String),
    #[error("|l and |p must appear together")]
    UnpairedFeedback,
    #[error("missing |f section")]
    MissingFeatures,
    #[error("unknown section |{0}")]
    UnknownSection(String),
    #[error("section |{0} appears more than once")]
    DuplicateSection(char),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Parse { line: u64, source: LineError },
    #[error("candidate set {set_id}: expected exactly one logged candidate, found {found}")]
    LoggedCount { set_id: u64, found: usize },
    #[error("candidate set {set_id} is empty")]
    EmptySet { set_id: u64 },
    #[error(transparent)]
    Invalid(#[from] LineError),
    #[error("read error: {0}")]
    Io(#[from] io::Error),
}

/// Label and propensity of the logged candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    label: f64,
    propensity: f64,
}

impl Feedback {
    pub fn new(label: f64, propensity: f64) -> Result<Self, LineError> {
        if label != CLICKED_LABEL && label != NOT_CLICKED_LABEL {
            return Err(LineError::BadLabel(label.to_string()));
        }
        if !(propensity > 0.0 && propensity.is_finite()) {
            return Err(LineError::NonPositivePropensity(propensity.to_string()));
        }
        Ok(Self { label, propensity })
    }

    pub fn clicked(propensity: f64) -> Result<Self, LineError> {
        Self::new(CLICKED_LABEL, propensity)
    }

    pub fn not_clicked(propensity: f64) -> Result<Self, LineError> {
        Self::new(NOT_CLICKED_LABEL, propensity)
    }

    /// Raw label as written in the log.
    pub fn label(&self) -> f64 {
        self.label
    }

    /// Importance weight recorded by the logging system, stored verbatim.
    pub fn propensity(&self) -> f64 {
        self.propensity
    }

    pub fn is_click(&self) -> bool {
        self.label == CLICKED_LABEL
    }
}

/// One ad candidate: its sparse `(feature_id, value)` pairs, plus feedback
/// when it is the logged candidate of its set.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    features: Vec<(u32, f64)>,
    feedback: Option<Feedback>,
}

impl Candidate {
    /// Feature ids must be unique and values finite.
    pub fn new(features: Vec<(u32, f64)>, feedback: Option<Feedback>) -> Result<Self, LineError> {
        let mut ids: Vec<u32> = features.iter().map(|&(id, _)| id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(LineError::DuplicateFeature(w[0]));
        }
        if let Some(&(id, v)) = features.iter().find(|(_, v)| !v.is_finite()) {
            return Err(LineError::BadFeature(format!("{id}:{v}")));
        }
        Ok(Self { features, feedback })
    }

    pub fn features(&self) -> &[(u32, f64)] {
        &self.features
    }

    pub fn feedback(&self) -> Option<&Feedback> {
        self.feedback.as_ref()
    }

    pub fn is_logged(&self) -> bool {
        self.feedback.is_some()
    }
}

/// One impression: all candidates sharing a set id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    id: u64,
    candidates: Vec<Candidate>,
    logged_index: usize,
}

impl CandidateSet {
    /// Builds a set, locating the single logged candidate.
    pub fn new(id: u64, candidates: Vec<Candidate>) -> Result<Self, FormatError> {
        if candidates.is_empty() {
            return Err(FormatError::EmptySet { set_id: id });
        }
        let mut logged = candidates.iter().enumerate().filter(|(_, c)| c.is_logged());
        let found = logged.clone().count();
        match (logged.next(), found) {
            (Some((logged_index, _)), 1) => Ok(Self {
                id,
                candidates,
                logged_index,
            }),
            _ => Err(FormatError::LoggedCount { set_id: id, found }),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn logged_index(&self) -> usize {
        self.logged_index
    }

    pub fn logged(&self) -> &Candidate {
        &self.candidates[self.logged_index]
    }

    pub fn feedback(&self) -> &Feedback {
        self.logged().feedback().expect("logged candidate carries feedback")
    }
}

/// A parsed line: the candidate plus the id of the set it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub set_id: u64,
    pub candidate: Candidate,
}

fn parse_single_number(section: char, content: &str) -> Result<f64, LineError> {
    let mut tokens = content.split_whitespace();
    let bad = || LineError::BadNumber {
        section,
        token: content.trim().to_string(),
    };
    let token = tokens.next().ok_or_else(bad)?;
    if tokens.next().is_some() {
        return Err(bad());
    }
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad()),
    }
}

fn is_decimal(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn parse_feature(token: &str) -> Result<(u32, f64), LineError> {
    let bad = || LineError::BadFeature(token.to_string());
    let (id, value) = token.split_once(':').ok_or_else(bad)?;
    if !is_decimal(id) {
        return Err(bad());
    }
    let id = id.parse::<u32>().map_err(|_| bad())?;
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok((id, v)),
        _ => Err(bad()),
    }
}

/// Parses one log line.
///
/// Whitespace around the `|x` section markers is optional, so
/// `|p 11.3|f 0:1` and `|p 11.3 |f 0:1` are equivalent.
pub fn parse_line(line: &str) -> Result<ParsedLine, LineError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(LineError::Empty);
    }
    let mut sections = line.split('|');
    let id_text = sections.next().unwrap_or_default().trim();
    if !is_decimal(id_text) {
        return Err(LineError::BadId(id_text.to_string()));
    }
    let set_id = id_text
        .parse::<u64>()
        .map_err(|_| LineError::BadId(id_text.to_string()))?;

    let mut label = None;
    let mut propensity = None;
    let mut features: Option<Vec<(u32, f64)>> = None;
    for section in sections {
        let name_end = section.find(char::is_whitespace).unwrap_or(section.len());
        let (name, content) = section.split_at(name_end);
        match name {
            "l" if label.is_some() => return Err(LineError::DuplicateSection('l')),
            "p" if propensity.is_some() => return Err(LineError::DuplicateSection('p')),
            "f" if features.is_some() => return Err(LineError::DuplicateSection('f')),
            "l" => label = Some(parse_single_number('l', content)?),
            "p" => propensity = Some(parse_single_number('p', content)?),
            "f" => {
                features = Some(
                    content
                        .split_whitespace()
                        .map(parse_feature)
                        .collect::<Result<_, _>>()?,
                )
            }
            other => return Err(LineError::UnknownSection(other.to_string())),
        }
    }

    let features = features.ok_or(LineError::MissingFeatures)?;
    let feedback = match (label, propensity) {
        (None, None) => None,
        (Some(l), Some(p)) => Some(Feedback::new(l, p)?),
        _ => return Err(LineError::UnpairedFeedback),
    };
    Ok(ParsedLine {
        set_id,
        candidate: Candidate::new(features, feedback)?,
    })
}

/// Renders one candidate line: `ID [|l L |p P ]|f id:value ...`.
pub fn format_candidate(set_id: u64, candidate: &Candidate) -> String {
    let mut line = String::with_capacity(16 + 8 * candidate.features.len());
    write_candidate(&mut line, set_id, candidate).expect("writing to a String cannot fail");
    line
}

fn write_candidate(out: &mut impl fmt::Write, set_id: u64, candidate: &Candidate) -> fmt::Result {
    write!(out, "{set_id}")?;
    if let Some(fb) = &candidate.feedback {
        // f64 Display is the shortest representation that round-trips.
        write!(out, " |l {} |p {}", fb.label, fb.propensity)?;
    }
    out.write_str(" |f")?;
    for (id, value) in &candidate.features {
        write!(out, " {id}:{value}")?;
    }
    Ok(())
}

/// Serializes a set to its text lines, each terminated by `\n`.
pub fn serialize_set(set: &CandidateSet) -> String {
    let mut text = String::new();
    for candidate in &set.candidates {
        write_candidate(&mut text, set.id, candidate).expect("writing to a String cannot fail");
        text.push('\n');
    }
    text
}

pub fn write_set<W: Write>(out: &mut W, set: &CandidateSet) -> io::Result<()> {
    out.write_all(serialize_set(set).as_bytes())
}

/// Wraps `reader` in a gzip decoder when its first bytes are the gzip magic.
pub fn decompress_if_gzip<R>(reader: R) -> io::Result<Box<dyn BufRead + Send>>
where
    R: Read + Send + 'static,
{
    let mut reader = BufReader::with_capacity(1 << 16, reader);
    let head = reader.fill_buf()?;
    if head.len() >= 2 && head[..2] == GZIP_MAGIC {
        Ok(Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Opens a plain or gzip-compressed log file for line reading.
pub fn open_input(path: impl AsRef<Path>) -> io::Result<Box<dyn BufRead + Send>> {
    decompress_if_gzip(File::open(path)?)
}

/// Opens a log file and streams its candidate sets.
pub fn read_sets(path: impl AsRef<Path>) -> io::Result<SetReader<Box<dyn BufRead + Send>>> {
    Ok(SetReader::new(open_input(path)?))
}

/// Groups consecutive lines into candidate sets.
///
/// A set ends where the id changes, so only one set is held in memory at a
/// time. The iterator stops after the first error.
pub struct SetReader<R> {
    source: R,
    buf: String,
    line_no: u64,
    pending: Option<ParsedLine>,
    last_id: Option<u64>,
    id_regressions: u64,
    done: bool,
}

impl<R: BufRead> SetReader<R> {
    pub fn new(source: R) -> Self {
        Self {
            source,
            buf: String::new(),
            line_no: 0,
            pending: None,
            last_id: None,
            id_regressions: 0,
            done: false,
        }
    }

    /// Number of sets whose id did not increase over the previous set.
    ///
    /// Ids are only compared with their neighbour, so a repeated id that is
    /// not contiguous yields a separate set; in an id-sorted log every such
    /// repeat shows up here.
    pub fn id_regressions(&self) -> u64 {
        self.id_regressions
    }

    /// Lines consumed so far.
    pub fn line_number(&self) -> u64 {
        self.line_no
    }

    fn next_line(&mut self) -> Result<Option<ParsedLine>, FormatError> {
        loop {
            self.buf.clear();
            if self.source.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            return parse_line(&self.buf).map(Some).map_err(|source| FormatError::Parse {
                line: self.line_no,
                source,
            });
        }
    }

    fn next_set(&mut self) -> Result<Option<CandidateSet>, FormatError> {
        let first = match self.pending.take() {
            Some(line) => line,
            None => match self.next_line()? {
                Some(line) => line,
                None => return Ok(None),
            },
        };
        let set_id = first.set_id;
        let mut candidates = vec![first.candidate];
        while let Some(line) = self.next_line()? {
            if line.set_id != set_id {
                self.pending = Some(line);
                break;
            }
            candidates.push(line.candidate);
        }
        if let Some(last) = self.last_id {
            if set_id <= last {
                if self.id_regressions == 0 {
                    log::warn!("candidate set id {set_id} follows {last}: ids are not increasing");
                }
                self.id_regressions += 1;
            }
        }
        self.last_id = Some(set_id);
        CandidateSet::new(set_id, candidates).map(Some)
    }
}

impl<R: BufRead> Iterator for SetReader<R> {
    type Item = Result<CandidateSet, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_set() {
            Ok(Some(set)) => Some(Ok(set)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
