//! CSV export of a bundle: one row per sample,
//! `f0, …, f{d-1}, label, split, domain`.
//!
//! `split` is one of `pretrain`, `id_train`, `id_val`, `ood`; `domain` is
//! `mixture` for pretraining rows, `id` for ID rows and the domain name for
//! OOD rows. Floats use Rust's shortest round-trip formatting.

use std::path::Path;

use super::DatasetBundle;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::Batch;

pub fn write_bundle_csv(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file));
    let dim = bundle.input_dim();
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.extend(["label", "split", "domain"].map(String::from));
    let wrap = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(wrap)?;

    let mut sections: Vec<(&str, &str, &Batch)> = vec![
        ("pretrain", "mixture", &bundle.pretrain),
        ("id_train", "id", &bundle.id_train),
        ("id_val", "id", &bundle.id_val),
    ];
    for (name, batch) in &bundle.ood {
        sections.push(("ood", name.as_str(), batch));
    }
    let mut record = Vec::with_capacity(dim + 3);
    for (split, domain, batch) in sections {
        for i in 0..batch.len() {
            record.clear();
            record.extend(batch.x.row(i).iter().map(|v| v.to_string()));
            record.push(batch.y[i].to_string());
            record.push(split.to_string());
            record.push(domain.to_string());
            w.write_record(&record).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Section {
    data: Vec<f64>,
    y: Vec<usize>,
}

impl Section {
    fn into_batch(self, dim: usize) -> Result<Batch> {
        Batch::new(Mat::from_vec(self.y.len(), dim, self.data)?, self.y)
    }
}

pub fn read_bundle_csv(path: &Path) -> Result<DatasetBundle> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let fmt = |line: u64, msg: String| Error::Format(format!("{}:{line}: {msg}", path.display()));
    let header = r.headers().map_err(|e| fmt(1, e.to_string()))?.clone();
    let n = header.len();
    if n < 4 || &header[n - 3] != "label" || &header[n - 2] != "split" || &header[n - 1] != "domain" {
        return Err(fmt(1, "expected feature columns followed by label,split,domain".into()));
    }
    let dim = n - 3;

    let mut pretrain = Section::default();
    let mut id_train = Section::default();
    let mut id_val = Section::default();
    let mut ood: Vec<(String, Section)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| fmt(line, e.to_string()))?;
        let sec = match &rec[dim + 1] {
            "pretrain" => &mut pretrain,
            "id_train" => &mut id_train,
            "id_val" => &mut id_val,
            "ood" => {
                let name = &rec[dim + 2];
                let pos = match ood.iter().position(|(n, _)| n == name) {
                    Some(p) => p,
                    None => {
                        ood.push((name.to_string(), Section::default()));
                        ood.len() - 1
                    }
                };
                &mut ood[pos].1
            }
            other => return Err(fmt(line, format!("unknown split {other:?}"))),
        };
        for j in 0..dim {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| fmt(line, format!("bad feature value {:?}", &rec[j])))?;
            sec.data.push(v);
        }
        let y: usize = rec[dim]
            .parse()
            .map_err(|_| fmt(line, format!("bad label {:?}", &rec[dim])))?;
        sec.y.push(y);
    }
    Ok(DatasetBundle {
        pretrain: pretrain.into_batch(dim)?,
        id_train: id_train.into_batch(dim)?,
        id_val: id_val.into_batch(dim)?,
        ood: ood
            .into_iter()
            .map(|(n, s)| Ok((n, s.into_batch(dim)?)))
            .collect::<Result<_>>()?,
    })
}
