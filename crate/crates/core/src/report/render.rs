use std::collections::BTreeSet;

use super::{ProtocolCell, ReportDocument};
use crate::attrs::KnownProtocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

const LEGEND: &str =
    "[+n] flows on non-standard ports; * unique fingerprint in this run; + secure; - vulnerable; † caution; ? partial matches";
const EMPTY_CELL: &str = ".";

fn columns(r: &ReportDocument) -> Vec<String> {
    let mut cols: BTreeSet<String> = KnownProtocol::ALL
        .iter()
        .map(|p| p.abbreviation().to_string())
        .collect();
    cols.extend(r.totals.protocols.keys().cloned());
    cols.into_iter().collect()
}

fn cell_text(c: Option<&ProtocolCell>, with_marks: bool) -> String {
    let Some(c) = c.filter(|c| c.total() > 0) else {
        return EMPTY_CELL.to_string();
    };
    let mut s = c.standard_port_flows.to_string();
    if c.nonstandard_port_flows > 0 {
        s.push_str(&format!(" [+{}]", c.nonstandard_port_flows));
    }
    let mut marks = if with_marks { c.marks.symbols() } else { String::new() };
    if c.partial_flows > 0 {
        marks.push('?');
    }
    if !marks.is_empty() {
        s.push(' ');
        s.push_str(&marks);
    }
    s
}

/// Fixed-width device by protocol table. Rows are sorted by device id with
/// a closing total row.
pub fn render_table(r: &ReportDocument) -> String {
    let cols = columns(r);
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("device".to_string()).chain(cols.iter().cloned()).collect()];
    for (id, dev) in &r.devices {
        let mut row = vec![id.clone()];
        row.extend(cols.iter().map(|p| cell_text(dev.protocols.get(p), true)));
        rows.push(row);
    }
    if !r.devices.is_empty() {
        let mut row = vec!["total".to_string()];
        row.extend(cols.iter().map(|p| cell_text(r.totals.protocols.get(p), false)));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out.push_str(LEGEND);
    out.push('\n');
    out
}

pub fn export(r: &ReportDocument, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("reports always serialize");
            s.push('\n');
            s.into_bytes()
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "device",
                "protocol",
                "standard_port_flows",
                "nonstandard_port_flows",
                "partial_flows",
                "marks",
                "findings",
            ])
            .expect("in-memory csv write");
            for (id, dev) in &r.devices {
                for (proto, c) in dev.protocols.iter().filter(|(_, c)| c.total() > 0) {
                    let findings: Vec<String> = c.findings.iter().map(|(k, v)| format!("{k}:{v}")).collect();
                    w.write_record([
                        id.as_str(),
                        proto,
                        &c.standard_port_flows.to_string(),
                        &c.nonstandard_port_flows.to_string(),
                        &c.partial_flows.to_string(),
                        &c.marks.symbols(),
                        &findings.join(";"),
                    ])
                    .expect("in-memory csv write");
                }
            }
            w.into_inner().expect("in-memory csv flush")
        }
    }
}

pub fn import_json(bytes: &[u8]) -> Result<ReportDocument, serde_json::Error> {
    serde_json::from_slice(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{DeviceReport, Marks};

    fn sample() -> ReportDocument {
        let mut r = ReportDocument::default();
        let mut dev = DeviceReport::default();
        dev.protocols.insert(
            "TLS".into(),
            ProtocolCell {
                standard_port_flows: 647,
                nonstandard_port_flows: 179,
                partial_flows: 0,
                findings: [("TLS.CLIENT_VERSION_DEPRECATED".to_string(), 3)].into(),
                marks: Marks { unique: true, secure: false, vulnerable: true, caution: false },
            },
        );
        r.devices.insert("awair".into(), dev.clone());
        r.totals.protocols = dev.protocols.clone();
        r
    }

    #[test]
    fn bracketed_cells() {
        let t = render_table(&sample());
        assert!(t.contains("647 [+179] *-"), "{t}");
        assert!(t.lines().next().unwrap().starts_with("device"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let t = render_table(&ReportDocument::default());
        assert_eq!(t.lines().count(), 2);
        assert_eq!(t.lines().next().unwrap(), "device  DHCP  DNS  HTTP  NTP  SSDP  TLS");
    }

    #[test]
    fn json_round_trip_and_csv_rows() {
        let r = sample();
        assert_eq!(import_json(&export(&r, ExportFormat::Json)).unwrap(), r);
        let csv = String::from_utf8(export(&r, ExportFormat::Csv)).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.contains("awair,TLS,647,179,0,*-,TLS.CLIENT_VERSION_DEPRECATED:3"));
    }
}
