//! Network checkpoints (`<file>` holds the flat parameters as little-endian
//! f64, `<file>.json` the architecture) and loss-trace CSV files.

use std::path::Path;

use organloc_core::model::{Architecture, ConvNet, TraceEntry};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub num_params: usize,
    /// Organ of each output channel.
    pub organ_ids: Vec<u16>,
    pub steps: usize,
}

pub fn write_checkpoint(path: &Path, net: &ConvNet, organ_ids: &[u16], steps: usize) -> Result<()> {
    let header = CheckpointHeader {
        architecture: net.architecture(),
        num_params: net.num_params(),
        organ_ids: organ_ids.to_vec(),
        steps,
    };
    let payload: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    io::write_bytes(path, &payload)?;
    io::write_json(&io::sidecar(path), &header)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ConvNet)> {
    let header: CheckpointHeader = io::read_json(&io::sidecar(path))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.num_params * 8 {
        return Err(Error::format(path, format!("expected {} parameters, found {} bytes", header.num_params, bytes.len())));
    }
    if header.organ_ids.len() != header.architecture.out_channels {
        return Err(Error::format(path, "organ_ids must name every output channel"));
    }
    let params: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut net = ConvNet::zeros(&header.architecture);
    net.set_params(&params).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, net))
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in trace {
        w.serialize(e).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    io::write_bytes(path, &bytes)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|source| Error::Csv { path: path.into(), source })
}
