//! CSV emission: header row, 12 significant digits, `\n` line endings.

use fsqkd::format::fmt_sig;

pub const DIGITS: usize = 12;

pub fn num(x: f64) -> String {
    fmt_sig(x, DIGITS)
}

/// An in-memory CSV table.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header).expect("writing to memory");
        Self { w }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(cells).expect("writing to memory");
    }

    pub fn finish(self) -> Vec<u8> {
        self.w.into_inner().expect("flushing to memory")
    }
}
