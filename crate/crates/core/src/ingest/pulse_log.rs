use std::io::{Read, Write};

use super::ParseError;
use crate::pulse_engine::Pulse;
use crate::Channel;

/// Parses a `channel,timestamp_ms` pulse log. Output is sorted by timestamp,
/// ties broken by channel letter.
pub fn parse_pulse_log<R: Read>(reader: R) -> Result<Vec<Pulse>, ParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(ParseError::from_csv)?.clone();
    let expected = ["channel", "timestamp_ms"];
    if header.len() != 2
        || header
            .iter()
            .zip(expected)
            .any(|(h, e)| !h.eq_ignore_ascii_case(e))
    {
        return Err(ParseError::at(1, "expected header 'channel,timestamp_ms'"));
    }

    let mut pulses = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ParseError::from_csv)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let channel: Channel = row[0]
            .parse()
            .map_err(|e: crate::UnknownChannel| ParseError::at(line, e.to_string()))?;
        let ts: i64 = row[1]
            .parse()
            .map_err(|_| ParseError::at(line, format!("invalid timestamp '{}'", &row[1])))?;
        if ts < 0 {
            return Err(ParseError::at(line, format!("negative timestamp {ts}")));
        }
        pulses.push(Pulse::new(channel, ts as u64));
    }
    pulses.sort();
    Ok(pulses)
}

pub fn write_pulse_log<W: Write>(pulses: &[Pulse], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["channel", "timestamp_ms"])?;
    for p in pulses {
        w.write_record([p.channel.to_string(), p.timestamp_ms.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_mapping() {
        let p = parse_pulse_log("channel,timestamp_ms\nA,1000\nB,1100\n".as_bytes()).unwrap();
        assert_eq!(
            p,
            vec![Pulse::new(Channel::A, 1000), Pulse::new(Channel::B, 1100)]
        );
    }

    #[test]
    fn ties_break_by_channel() {
        let p = parse_pulse_log("channel,timestamp_ms\nB,50\nA,50\n".as_bytes()).unwrap();
        assert_eq!(
            p,
            vec![Pulse::new(Channel::A, 50), Pulse::new(Channel::B, 50)]
        );
    }

    #[test]
    fn empty_body() {
        assert!(parse_pulse_log("channel,timestamp_ms\n".as_bytes())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_unknown_channel_and_negative_time() {
        let err = parse_pulse_log("channel,timestamp_ms\nA,1\nE,5\n".as_bytes()).unwrap_err();
        assert_eq!(err.line, 3);
        let err = parse_pulse_log("channel,timestamp_ms\nA,-5\n".as_bytes()).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("negative"));
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(raw in proptest::collection::vec((0usize..4, 0u64..10_000_000), 0..200)) {
            let mut pulses: Vec<Pulse> = raw.into_iter().map(|(c, t)| Pulse::new(Channel::ALL[c], t)).collect();
            pulses.sort();
            let mut buf = Vec::new();
            write_pulse_log(&pulses, &mut buf).unwrap();
            prop_assert_eq!(parse_pulse_log(buf.as_slice()).unwrap(), pulses);
        }
    }
}
