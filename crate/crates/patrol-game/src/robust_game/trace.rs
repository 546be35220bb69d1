//! Solve-trace records and their append-only JSONL persistence.
//!
//! A trace file is one JSON object per line: a header (mode, config,
//! scenario), one record per expensive sample in evaluation order, and a
//! final line with the fitted surface and the reported solution. A partial
//! file (header plus some samples) is a valid resume point: every random
//! draw in the solver is keyed by sample index, so replaying the recorded
//! samples and continuing reproduces the uninterrupted run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bioeconomics::Scenario;
use crate::robust_game::{ObjectiveMode, RedResponses, SolverConfig};
use crate::surrogate::TreeEnsemble;
use crate::{Error, Result};

/// How a sample entered the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Scaled Latin-hypercube draw.
    Lhs,
    /// Alternating best-response heuristic.
    Unilateral,
    /// Argmax of the response surface under a random exploration bound.
    Surface,
}

/// One expensive evaluation: the Blue allocation, both Red responses, the
/// four utilities, and the surface CV score when one was computed at this
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub source: SampleSource,
    pub allocation: Vec<f64>,
    pub responses: RedResponses,
    /// The value the surface is trained on (the lambda blend).
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportedSource {
    SurfaceArgmax,
    Sampled,
}

/// The end-of-run summary: the surface argmax with its true evaluation,
/// the best sampled point, and which of the two is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub surface_argmax: Vec<f64>,
    pub surface_argmax_objective: f64,
    pub surface_argmax_responses: RedResponses,
    pub best_sample_index: usize,
    pub reported_source: ReportedSource,
    pub reported: Vec<f64>,
    pub reported_objective: f64,
}

/// Full record of one solver run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveTrace {
    pub mode: ObjectiveMode,
    pub config: SolverConfig,
    pub scenario: Scenario,
    pub samples: Vec<SampleRecord>,
    pub surface: Option<TreeEnsemble>,
    pub final_report: Option<FinalReport>,
}

impl SolveTrace {
    pub fn new(mode: ObjectiveMode, config: SolverConfig, scenario: Scenario) -> Self {
        SolveTrace {
            mode,
            config,
            scenario,
            samples: Vec::new(),
            surface: None,
            final_report: None,
        }
    }

    /// The reported solution, once the run finished.
    pub fn best_estimate(&self) -> Option<&[f64]> {
        self.final_report.as_ref().map(|f| f.reported.as_slice())
    }

    /// Best recorded sample by objective; ties go to the earliest.
    pub fn best_sample(&self) -> Option<&SampleRecord> {
        self.samples
            .iter()
            .fold(None, |best: Option<&SampleRecord>, s| match best {
                Some(b) if b.objective >= s.objective => Some(b),
                _ => Some(s),
            })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header {
        mode: ObjectiveMode,
        config: SolverConfig,
        scenario: Scenario,
    },
    Sample {
        record: SampleRecord,
    },
    Final {
        surface: Option<TreeEnsemble>,
        report: FinalReport,
    },
}

/// Streams trace lines to disk as a run progresses. The newest sample is
/// buffered until the solver can no longer amend it (its CV score is
/// attached right after evaluation), then flushed.
pub struct TraceSink {
    writer: BufWriter<File>,
    pending: Option<SampleRecord>,
}

impl TraceSink {
    pub fn create(
        path: &Path,
        mode: ObjectiveMode,
        config: &SolverConfig,
        scenario: &Scenario,
    ) -> Result<Self> {
        let file = File::create(path)?;
        let mut sink = TraceSink {
            writer: BufWriter::new(file),
            pending: None,
        };
        sink.write_line(&TraceLine::Header {
            mode,
            config: *config,
            scenario: scenario.clone(),
        })?;
        Ok(sink)
    }

    /// Reopens an existing trace for appending after a resume. The already
    /// replayed records stay untouched.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(TraceSink {
            writer: BufWriter::new(file),
            pending: None,
        })
    }

    fn write_line(&mut self, line: &TraceLine) -> Result<()> {
        let json = serde_json::to_string(line).map_err(|e| Error::Trace(e.to_string()))?;
        self.writer.write_all(json.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn flush_pending(&mut self) -> Result<()> {
        if let Some(record) = self.pending.take() {
            self.write_line(&TraceLine::Sample { record })?;
        }
        Ok(())
    }

    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        self.flush_pending()?;
        self.pending = Some(record);
        Ok(())
    }

    pub fn attach_cv(&mut self, cv_r2: f64) {
        if let Some(p) = self.pending.as_mut() {
            p.cv_r2 = Some(cv_r2);
        }
    }

    pub fn finish(mut self, surface: Option<TreeEnsemble>, report: FinalReport) -> Result<()> {
        self.flush_pending()?;
        self.write_line(&TraceLine::Final { surface, report })
    }
}

/// Writes a complete in-memory trace as a JSONL file.
pub fn save_trace(trace: &SolveTrace, path: &Path) -> Result<()> {
    let mut sink = TraceSink::create(path, trace.mode, &trace.config, &trace.scenario)?;
    for record in &trace.samples {
        sink.push(record.clone())?;
    }
    if let Some(report) = &trace.final_report {
        sink.finish(trace.surface.clone(), report.clone())?;
    } else {
        sink.flush_pending()?;
    }
    Ok(())
}

/// Loads a (possibly partial) trace file.
pub fn load_trace(path: &Path) -> Result<SolveTrace> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut trace: Option<SolveTrace> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line)
            .map_err(|e| Error::Trace(format!("line {}: {e}", lineno + 1)))?;
        match parsed {
            TraceLine::Header {
                mode,
                config,
                scenario,
            } => {
                if trace.is_some() {
                    return Err(Error::Trace("duplicate header line".into()));
                }
                trace = Some(SolveTrace::new(mode, config, scenario));
            }
            TraceLine::Sample { record } => {
                let t = trace
                    .as_mut()
                    .ok_or_else(|| Error::Trace("sample before header".into()))?;
                if record.index != t.samples.len() {
                    return Err(Error::Trace(format!(
                        "sample index {} out of order at position {}",
                        record.index,
                        t.samples.len()
                    )));
                }
                t.samples.push(record);
            }
            TraceLine::Final { surface, report } => {
                let t = trace
                    .as_mut()
                    .ok_or_else(|| Error::Trace("final line before header".into()))?;
                t.surface = surface;
                t.final_report = Some(report);
            }
        }
    }
    trace.ok_or_else(|| Error::Trace("empty trace file".into()))
}
