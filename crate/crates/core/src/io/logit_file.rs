//! Binary logit batches.
//!
//! ```text
//! magic  "ATKD-LGT"            8 bytes
//! version u32                  currently 1
//! T       u64                  tokens
//! C       u64                  classes
//! flags   u32                  bit 0: student logits present
//! teacher f32[T][C]            row-major
//! student f32[T][C]            only when flag bit 0 is set
//! targets u32[T]
//! mask    u8[T]                0 or 1
//! ```
//!
//! Every integer and float is little-endian regardless of host.

use std::fs;
use std::path::Path;

use crate::bytes::{put_f32s, put_u32, put_u64, Reader};
use crate::decompose::LogitBatch;
use crate::error::{Error, ParseErrorKind, Result};

pub const LOGIT_MAGIC: &[u8; 8] = b"ATKD-LGT";
pub const LOGIT_VERSION: u32 = 1;
pub const FLAG_HAS_STUDENT: u32 = 1;
const HEADER_LEN: u64 = 8 + 4 + 8 + 8 + 4;

/// In-memory image of a logit file, kept in its storage precision so that
/// rewriting it reproduces the original bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFile {
    pub tokens: usize,
    pub classes: usize,
    pub teacher: Vec<f32>,
    pub student: Option<Vec<f32>>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl LogitFile {
    /// Narrows a batch to `f32`. The student half is written only when
    /// `with_student` is set.
    pub fn from_batch(batch: &LogitBatch, with_student: bool) -> Self {
        let narrow = |xs: &[f64]| xs.iter().map(|&x| x as f32).collect::<Vec<_>>();
        Self {
            tokens: batch.tokens(),
            classes: batch.classes(),
            teacher: narrow(batch.teacher_logits()),
            student: with_student.then(|| narrow(batch.student_logits())),
            targets: batch.targets().iter().map(|&t| t as u32).collect(),
            mask: batch.mask().to_vec(),
        }
    }

    pub fn has_student(&self) -> bool {
        self.student.is_some()
    }

    /// Widens to a [`LogitBatch`]. Without stored student logits the teacher
    /// logits stand in for the student, so every divergence term is zero but
    /// UnC is still meaningful.
    pub fn to_batch(&self) -> Result<LogitBatch> {
        let widen = |xs: &[f32]| xs.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let teacher = widen(&self.teacher);
        let student = match &self.student {
            Some(s) => widen(s),
            None => teacher.clone(),
        };
        LogitBatch::new(
            self.tokens,
            self.classes,
            teacher,
            student,
            self.targets.iter().map(|&t| t as usize).collect(),
            self.mask.clone(),
        )
    }

    pub fn byte_len(&self) -> u64 {
        let (t, c) = (self.tokens as u64, self.classes as u64);
        HEADER_LEN + 4 * t * c * (1 + self.has_student() as u64) + 4 * t + t
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cells = self.tokens * self.classes;
        let student_ok = self.student.as_ref().is_none_or(|s| s.len() == cells);
        if self.teacher.len() != cells || !student_ok || self.targets.len() != self.tokens || self.mask.len() != self.tokens {
            return Err(Error::InvalidInput("logit file sections disagree with T and C".into()));
        }
        let mut out = Vec::with_capacity(self.byte_len() as usize);
        out.extend_from_slice(LOGIT_MAGIC);
        put_u32(&mut out, LOGIT_VERSION);
        put_u64(&mut out, self.tokens as u64);
        put_u64(&mut out, self.classes as u64);
        put_u32(&mut out, if self.has_student() { FLAG_HAS_STUDENT } else { 0 });
        put_f32s(&mut out, self.teacher.iter().copied());
        if let Some(s) = &self.student {
            put_f32s(&mut out, s.iter().copied());
        }
        for &t in &self.targets {
            put_u32(&mut out, t);
        }
        out.extend(self.mask.iter().map(|&m| m as u8));
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.expect_magic(LOGIT_MAGIC)?;
        let at = r.offset();
        let version = r.u32()?;
        if version != LOGIT_VERSION {
            return Err(Error::parse(at, ParseErrorKind::UnsupportedVersion(version)));
        }
        let t_at = r.offset();
        let t = r.u64()?;
        let c_at = r.offset();
        let c = r.u64()?;
        let f_at = r.offset();
        let flags = r.u32()?;
        if flags & !FLAG_HAS_STUDENT != 0 {
            return Err(Error::parse(f_at, ParseErrorKind::UnknownFlags(flags)));
        }
        if c < 2 {
            return Err(Error::parse(
                c_at,
                ParseErrorKind::InvalidHeader(format!("need at least 2 classes, got {c}")),
            ));
        }
        let has_student = flags & FLAG_HAS_STUDENT != 0;
        let payload = t
            .checked_mul(c)
            .and_then(|tc| tc.checked_mul(4 * (1 + has_student as u64)))
            .and_then(|x| x.checked_add(5 * t))
            .ok_or_else(|| Error::parse(t_at, ParseErrorKind::InvalidHeader("T·C overflows".into())))?;
        r.require(payload)?;
        let (tokens, classes) = (t as usize, c as usize);

        let teacher = r.f32s(tokens * classes)?;
        let student = if has_student {
            Some(r.f32s(tokens * classes)?)
        } else {
            None
        };
        let mut targets = Vec::with_capacity(tokens);
        for token in 0..t {
            let at = r.offset();
            let target = r.u32()?;
            if target as u64 >= c {
                return Err(Error::parse(
                    at,
                    ParseErrorKind::TargetOutOfRange {
                        token,
                        target,
                        classes: c,
                    },
                ));
            }
            targets.push(target);
        }
        let mut mask = Vec::with_capacity(tokens);
        for token in 0..t {
            let at = r.offset();
            match r.u8()? {
                0 => mask.push(false),
                1 => mask.push(true),
                value => return Err(Error::parse(at, ParseErrorKind::InvalidMask { token, value })),
            }
        }
        r.finish()?;
        Ok(Self {
            tokens,
            classes,
            teacher,
            student,
            targets,
            mask,
        })
    }
}

pub fn read_logit_file(path: impl AsRef<Path>) -> Result<LogitFile> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    LogitFile::from_bytes(&buf)
}

pub fn write_logit_file(path: impl AsRef<Path>, file: &LogitFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, file.to_bytes()?).map_err(|e| Error::io(path, e))
}
