//! TOML run reports.

use toml::{Table, Value};

use crate::config::RunConfig;

pub struct Report {
    root: Table,
}

impl Report {
    pub fn new(command: &str) -> Self {
        let mut root = Table::new();
        root.insert("command".into(), Value::String(command.into()));
        Report { root }
    }

    fn table(&mut self, section: &str) -> &mut Table {
        let mut t = &mut self.root;
        for part in section.split('.') {
            t = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())).as_table_mut().expect("report section collides with a value");
        }
        t
    }

    pub fn int(&mut self, k: &str, v: usize) -> &mut Self {
        self.root.insert(k.into(), Value::Integer(v as i64));
        self
    }

    pub fn float(&mut self, k: &str, v: f64) -> &mut Self {
        self.root.insert(k.into(), Value::Float(v));
        self
    }

    /// Absent values are written as the string "undefined".
    pub fn opt_float(&mut self, k: &str, v: Option<f64>) -> &mut Self {
        self.root.insert(k.into(), opt(v));
        self
    }

    pub fn str(&mut self, k: &str, v: &str) -> &mut Self {
        self.root.insert(k.into(), Value::String(v.into()));
        self
    }

    pub fn floats(&mut self, k: &str, v: &[f64]) -> &mut Self {
        self.root.insert(k.into(), Value::Array(v.iter().map(|&x| Value::Float(x)).collect()));
        self
    }

    pub fn section_float(&mut self, section: &str, k: &str, v: Option<f64>) -> &mut Self {
        self.table(section).insert(k.into(), opt(v));
        self
    }

    pub fn section_int(&mut self, section: &str, k: &str, v: usize) -> &mut Self {
        self.table(section).insert(k.into(), Value::Integer(v as i64));
        self
    }

    pub fn config(&mut self, cfg: &RunConfig) {
        let v = Value::try_from(cfg).expect("run config serializes");
        self.root.insert("config".into(), v);
    }

    pub fn render(&self) -> String {
        toml::to_string(&self.root).expect("report serializes")
    }
}

fn opt(v: Option<f64>) -> Value {
    match v {
        Some(x) => Value::Float(x),
        None => Value::String("undefined".into()),
    }
}
