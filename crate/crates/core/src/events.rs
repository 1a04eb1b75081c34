//! Event stream files.
//!
//! CSV: header `t_us,x,y,polarity[,provenance]`, polarity 1 = ON, 0 = OFF.
//!
//! Binary: 9-byte little-endian records `u32 t_us, u16 x, u16 y, u8 flags`,
//! where flags bit 0 is polarity, bit 1 marks provenance as present and
//! bits 2-3 carry the provenance code (0 signal, 1 noise, 2 transient).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pixel::{Event, Polarity, Provenance};

pub const BINARY_RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
    None,
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "bin" | "binary" => Ok(EventFormat::Binary),
            "none" => Ok(EventFormat::None),
            other => Err(Error::Config(format!("unknown event format `{other}`"))),
        }
    }
}

impl EventFormat {
    pub fn file_name(self) -> Option<&'static str> {
        match self {
            EventFormat::Csv => Some("events.csv"),
            EventFormat::Binary => Some("events.bin"),
            EventFormat::None => None,
        }
    }
}

fn provenance_code(p: Provenance) -> u8 {
    match p {
        Provenance::Signal => 0,
        Provenance::Noise => 1,
        Provenance::Transient => 2,
    }
}

fn provenance_from_code(c: u8) -> Option<Provenance> {
    match c {
        0 => Some(Provenance::Signal),
        1 => Some(Provenance::Noise),
        2 => Some(Provenance::Transient),
        _ => None,
    }
}

enum Sink {
    Csv(csv::Writer<BufWriter<File>>),
    Binary(BufWriter<File>),
    Discard,
}

/// Streaming event writer; provenance is written only when asked for.
pub struct EventWriter {
    sink: Sink,
    path: PathBuf,
    ground_truth: bool,
    written: u64,
}

impl EventWriter {
    pub fn create(path: &Path, format: EventFormat, ground_truth: bool) -> Result<Self> {
        let open = || File::create(path).map_err(|e| Error::io(path, e));
        let sink = match format {
            EventFormat::Csv => {
                let mut w = csv::Writer::from_writer(BufWriter::new(open()?));
                if ground_truth {
                    w.write_record(["t_us", "x", "y", "polarity", "provenance"])?;
                } else {
                    w.write_record(["t_us", "x", "y", "polarity"])?;
                }
                Sink::Csv(w)
            }
            EventFormat::Binary => Sink::Binary(BufWriter::new(open()?)),
            EventFormat::None => Sink::Discard,
        };
        Ok(EventWriter {
            sink,
            path: path.to_path_buf(),
            ground_truth,
            written: 0,
        })
    }

    pub fn discard() -> Self {
        EventWriter {
            sink: Sink::Discard,
            path: PathBuf::new(),
            ground_truth: false,
            written: 0,
        }
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn write(&mut self, events: &[Event]) -> Result<()> {
        match &mut self.sink {
            Sink::Discard => {}
            Sink::Csv(w) => {
                for e in events {
                    let pol = if e.polarity == Polarity::On { "1" } else { "0" };
                    let (t, x, y) = (e.t_us.to_string(), e.x.to_string(), e.y.to_string());
                    if self.ground_truth {
                        w.write_record([&t, &x, &y, pol, e.provenance.as_str()])?;
                    } else {
                        w.write_record([&t, &x, &y, pol])?;
                    }
                }
            }
            Sink::Binary(w) => {
                let mut buf = Vec::with_capacity(events.len() * BINARY_RECORD_LEN);
                for e in events {
                    let t = u32::try_from(e.t_us).map_err(|_| {
                        Error::Config(format!("timestamp {} us does not fit the binary format", e.t_us))
                    })?;
                    let mut flags = (e.polarity == Polarity::On) as u8;
                    if self.ground_truth {
                        flags |= 0b10 | provenance_code(e.provenance) << 2;
                    }
                    buf.extend_from_slice(&t.to_le_bytes());
                    buf.extend_from_slice(&e.x.to_le_bytes());
                    buf.extend_from_slice(&e.y.to_le_bytes());
                    buf.push(flags);
                }
                w.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
            }
        }
        self.written += events.len() as u64;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self.sink {
            Sink::Discard => Ok(()),
            Sink::Csv(mut w) => w.flush().map_err(|e| Error::io(&self.path, e)),
            Sink::Binary(mut w) => w.flush().map_err(|e| Error::io(&self.path, e)),
        }
    }
}

/// Reads a CSV event file. Events without a provenance column are tagged as
/// signal.
pub fn read_events_csv(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| {
            rec.get(k).ok_or_else(|| Error::Syntax {
                line,
                msg: format!("missing column {k}"),
            })
        };
        let num = |k: usize| -> Result<u64> {
            field(k)?.trim().parse().map_err(|_| Error::Syntax {
                line,
                msg: format!("bad integer in column {k}"),
            })
        };
        let coord = |k: usize| -> Result<u16> {
            u16::try_from(num(k)?).map_err(|_| Error::Syntax {
                line,
                msg: format!("coordinate in column {k} out of range"),
            })
        };
        let polarity = match field(3)?.trim() {
            "1" => Polarity::On,
            "0" => Polarity::Off,
            other => {
                return Err(Error::Syntax {
                    line,
                    msg: format!("bad polarity `{other}`"),
                })
            }
        };
        let provenance = match rec.get(4).map(str::trim) {
            None | Some("") | Some("signal") => Provenance::Signal,
            Some("noise") => Provenance::Noise,
            Some("transient") => Provenance::Transient,
            Some(other) => {
                return Err(Error::Syntax {
                    line,
                    msg: format!("bad provenance `{other}`"),
                })
            }
        };
        out.push(Event {
            t_us: num(0)?,
            x: coord(1)?,
            y: coord(2)?,
            polarity,
            provenance,
        });
    }
    Ok(out)
}

pub fn read_events_bin(path: &Path) -> Result<Vec<Event>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % BINARY_RECORD_LEN != 0 {
        return Err(Error::Config(format!(
            "{}: length {} is not a multiple of {BINARY_RECORD_LEN}",
            path.display(),
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(BINARY_RECORD_LEN)
        .enumerate()
        .map(|(i, r)| {
            let flags = r[8];
            let provenance = if flags & 0b10 != 0 {
                provenance_from_code((flags >> 2) & 0b11).ok_or(Error::Syntax {
                    line: i + 1,
                    msg: "bad provenance code".into(),
                })?
            } else {
                Provenance::Signal
            };
            Ok(Event {
                t_us: u32::from_le_bytes([r[0], r[1], r[2], r[3]]) as u64,
                x: u16::from_le_bytes([r[4], r[5]]),
                y: u16::from_le_bytes([r[6], r[7]]),
                polarity: if flags & 1 != 0 { Polarity::On } else { Polarity::Off },
                provenance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events() -> Vec<Event> {
        vec![
            Event { t_us: 0, x: 1, y: 2, polarity: Polarity::On, provenance: Provenance::Signal },
            Event { t_us: 17, x: 63, y: 0, polarity: Polarity::Off, provenance: Provenance::Noise },
            Event { t_us: 4_000_000, x: 5, y: 9, polarity: Polarity::On, provenance: Provenance::Transient },
        ]
    }

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let evs = sample_events();
        for fmt in [EventFormat::Csv, EventFormat::Binary] {
            let p = dir.path().join(fmt.file_name().unwrap());
            let mut w = EventWriter::create(&p, fmt, true).unwrap();
            w.write(&evs).unwrap();
            assert_eq!(w.written(), 3);
            w.finish().unwrap();
            let back = match fmt {
                EventFormat::Csv => read_events_csv(&p).unwrap(),
                _ => read_events_bin(&p).unwrap(),
            };
            assert_eq!(back, evs);
        }
        let p = dir.path().join("events.bin");
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 27);
    }

    #[test]
    fn without_ground_truth_provenance_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let mut w = EventWriter::create(&p, EventFormat::Csv, false).unwrap();
        w.write(&sample_events()).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t_us,x,y,polarity\n0,1,2,1\n"));
        assert!(read_events_csv(&p).unwrap().iter().all(|e| e.provenance == Provenance::Signal));
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        std::fs::write(&p, [0u8; 10]).unwrap();
        assert!(read_events_bin(&p).is_err());
    }
}
