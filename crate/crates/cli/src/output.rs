//! Human lines by default, one JSON object per line under `--json`.

use serde_json::Value;

#[derive(Debug, Clone, Copy)]
pub struct Out {
    pub json: bool,
}

impl Out {
    pub fn emit(&self, human: impl FnOnce() -> String, json: Value) {
        if self.json {
            println!("{json}");
        } else {
            println!("{}", human());
        }
    }
}
