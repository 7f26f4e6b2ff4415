//! Event log destination: a file when a path is given, else stdout.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use eery_core::events::write_log;
use eery_core::EventRecord;

pub struct LogSink(Box<dyn Write>);

impl LogSink {
    pub fn open(path: Option<&Path>) -> io::Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout()),
        };
        Ok(Self(out))
    }

    pub fn write(&mut self, records: &[EventRecord]) -> io::Result<()> {
        write_log(&mut self.0, records)?;
        self.0.flush()
    }
}
