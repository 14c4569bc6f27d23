//! Adapter for a detector living in another process, spoken to over
//! line-delimited JSON on its stdin/stdout.
//!
//! Predict: `{"image_id": "...", "episode": n}` answered by
//! `{"predictions": [{"box": {...}, "scores": [...]}]}`.
//! Train: `{"train": {"episode": n, "strong": {...}, "pseudo": {...}}}`
//! answered by `{"ok": true}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ContextKey, Detector, Prediction, TrainingCorpus};
use crate::data::{ImageId, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub image_id: ImageId,
    pub episode: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub predictions: Vec<Prediction>,
}

struct Channel<R, W> {
    reader: R,
    writer: W,
}

pub struct ExternalDetector<R, W> {
    channel: Mutex<Channel<R, W>>,
    num_categories: usize,
    child: Option<Child>,
}

impl<R: BufRead + Send, W: Write + Send> ExternalDetector<R, W> {
    pub fn new(reader: R, writer: W, num_categories: usize) -> Self {
        Self {
            channel: Mutex::new(Channel { reader, writer }),
            num_categories,
            child: None,
        }
    }

    fn exchange(&self, request: &serde_json::Value) -> Result<serde_json::Value> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Detector("external detector channel poisoned".into()))?;
        let line = serde_json::to_string(request)?;
        writeln!(ch.writer, "{line}")
            .and_then(|_| ch.writer.flush())
            .map_err(|e| Error::Detector(format!("writing request: {e}")))?;
        let mut reply = String::new();
        let n = ch
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::Detector(format!("reading response: {e}")))?;
        if n == 0 {
            return Err(Error::Detector("external detector closed its output".into()));
        }
        Ok(serde_json::from_str(reply.trim_end())?)
    }
}

impl ExternalDetector<BufReader<ChildStdout>, ChildStdin> {
    /// Spawn `program args...` and talk to it over its stdio.
    pub fn spawn(program: &str, args: &[String], num_categories: usize) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Detector(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut det = Self::new(stdout, stdin, num_categories);
        det.child = Some(child);
        Ok(det)
    }
}

impl<R, W> Drop for ExternalDetector<R, W> {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> Detector for ExternalDetector<R, W> {
    fn train(&mut self, corpus: &TrainingCorpus, episode: u32) -> Result<()> {
        let reply = self.exchange(&json!({
            "train": {
                "episode": episode,
                "strong": corpus.strong_items(),
                "pseudo": corpus.pseudo_items(),
            }
        }))?;
        if reply.get("ok").and_then(|v| v.as_bool()) != Some(true) {
            return Err(Error::Detector(format!("train rejected: {reply}")));
        }
        Ok(())
    }

    fn predict(&self, image: &ImageRecord, ctx: &ContextKey) -> Result<Vec<Prediction>> {
        let req = PredictRequest {
            image_id: image.image_id.clone(),
            episode: ctx.episode,
        };
        let reply: PredictResponse = serde_json::from_value(self.exchange(&serde_json::to_value(&req)?)?)?;
        for p in &reply.predictions {
            p.validate(self.num_categories)
                .map_err(|e| Error::Detector(format!("image {}: {e}", image.image_id)))?;
        }
        Ok(reply.predictions)
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "external": true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn speaks_line_delimited_json() {
        let replies = concat!(
            r#"{"ok": true}"#,
            "\n",
            r#"{"predictions": [{"box": {"xmin": 1, "ymin": 2, "xmax": 3, "ymax": 4}, "scores": [0.25, 0.75]}]}"#,
            "\n"
        );
        let mut sent = Vec::new();
        {
            let mut det = ExternalDetector::new(Cursor::new(replies.as_bytes()), &mut sent, 2);
            det.train(&TrainingCorpus::default(), 1).unwrap();
            let img = ImageRecord {
                image_id: ImageId::new("a"),
                width: 10,
                height: 10,
                objects: vec![],
            };
            let ctx = ContextKey {
                seed: 0,
                episode: 4,
                image_id: img.image_id.clone(),
            };
            let preds = det.predict(&img, &ctx).unwrap();
            assert_eq!(preds.len(), 1);
            assert_eq!(preds[0].top_category(), 1);
        }
        let sent = String::from_utf8(sent).unwrap();
        let lines: Vec<&str> = sent.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with(r#"{"train":"#));
        assert_eq!(lines[1], r#"{"episode":4,"image_id":"a"}"#);
    }

    #[test]
    fn invalid_scores_rejected() {
        let replies = r#"{"predictions": [{"box": {"xmin": 1, "ymin": 2, "xmax": 3, "ymax": 4}, "scores": [0.5, 0.6]}]}
"#;
        let det = ExternalDetector::new(Cursor::new(replies.as_bytes()), Vec::new(), 2);
        let img = ImageRecord {
            image_id: ImageId::new("a"),
            width: 10,
            height: 10,
            objects: vec![],
        };
        let ctx = ContextKey {
            seed: 0,
            episode: 0,
            image_id: img.image_id.clone(),
        };
        assert!(det.predict(&img, &ctx).is_err());
    }
}
