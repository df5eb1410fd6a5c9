use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::{CountConfig, ParseError, VehicleRecord};
use crate::Direction;

const HEADER: [&str; 8] = [
    "Date",
    "Time",
    "Channel",
    "Speed",
    "Wheelbase",
    "Gap",
    "Headway",
    "Class",
];

#[derive(Debug, Default)]
struct Columns {
    date: usize,
    time: usize,
    channel: usize,
    speed: Option<usize>,
    wheelbase: Option<usize>,
    gap: Option<usize>,
    headway: Option<usize>,
    class: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, ParseError> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
        };
        let required = |name: &'static str| {
            find(name).ok_or_else(|| ParseError::at(1, format!("missing required column '{name}'")))
        };
        Ok(Columns {
            date: required("Date")?,
            time: required("Time")?,
            channel: required("Channel")?,
            speed: find("Speed"),
            wheelbase: find("Wheelbase"),
            gap: find("Gap"),
            headway: find("Headway"),
            class: find("Class"),
        })
    }
}

/// Parses a per-vehicle worksheet exported as CSV.
///
/// Lane 1 maps to [`Direction::Enter`] unless `counter_id` is listed in
/// `config.inverted_counters`.
pub fn parse_vehicle_worksheet<R: Read>(
    reader: R,
    config: &CountConfig,
    counter_id: &str,
) -> Result<Vec<VehicleRecord>, ParseError> {
    let invert = config.inverted_counters.iter().any(|c| c == counter_id);
    parse_worksheet_with(reader, invert, counter_id)
}

/// Same as [`parse_vehicle_worksheet`] with the lane inversion given directly.
pub fn parse_worksheet_with<R: Read>(
    reader: R,
    invert: bool,
    counter_id: &str,
) -> Result<Vec<VehicleRecord>, ParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(ParseError::from_csv)?.clone();
    let cols = Columns::from_header(&header)?;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ParseError::from_csv)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let opt_field = |idx: Option<usize>| idx.map(field).filter(|s| !s.is_empty());

        let date = parse_date(field(cols.date)).map_err(|m| ParseError::at(line, m))?;
        let time = parse_time(field(cols.time)).map_err(|m| ParseError::at(line, m))?;
        let lane = lane_of(field(cols.channel)).map_err(|m| ParseError::at(line, m))?;
        let direction = match (lane, invert) {
            (1, false) | (2, true) => Direction::Enter,
            _ => Direction::Exit,
        };

        let number = |name: &str, idx: Option<usize>| -> Result<Option<f64>, ParseError> {
            match opt_field(idx) {
                None => Ok(None),
                Some(s) => {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| ParseError::at(line, format!("invalid {name} '{s}'")))?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(ParseError::at(
                            line,
                            format!("{name} must be a non-negative number, got '{s}'"),
                        ));
                    }
                    Ok(Some(v))
                }
            }
        };

        let vehicle_class = match opt_field(cols.class) {
            None => None,
            Some(s) => Some(
                s.parse::<u8>()
                    .map_err(|_| ParseError::at(line, format!("invalid Class '{s}'")))?,
            ),
        };

        out.push(VehicleRecord {
            timestamp: NaiveDateTime::new(date, time),
            direction,
            speed_mph: number("Speed", cols.speed)?.unwrap_or(0.0),
            wheelbase_ft: number("Wheelbase", cols.wheelbase)?.unwrap_or(0.0),
            gap_ft: number("Gap", cols.gap)?,
            headway_s: number("Headway", cols.headway)?,
            vehicle_class,
            counter_id: counter_id.to_string(),
        });
    }
    Ok(out)
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%m/%d/%Y")
        .map_err(|e| format!("invalid date '{s}' ({e}), expected M/D/YYYY"))
}

fn parse_time(s: &str) -> Result<NaiveTime, String> {
    NaiveTime::parse_from_str(s, "%I:%M:%S %p")
        .map_err(|e| format!("invalid time '{s}' ({e}), expected h:mm:ss AM/PM"))
}

/// Extracts the lane number from free channel text such as "B to C, Lane 1".
fn lane_of(channel: &str) -> Result<u8, String> {
    let lower = channel.to_ascii_lowercase();
    let mut found = None;
    let mut rest = lower.as_str();
    while let Some(pos) = rest.find("lane") {
        let tail = rest[pos + 4..].trim_start();
        let digits: String = tail.chars().take_while(|c| c.is_ascii_digit()).collect();
        match digits.as_str() {
            "1" | "2" => {
                let lane = if digits == "1" { 1 } else { 2 };
                if found.is_some_and(|f| f != lane) {
                    return Err(format!("channel '{channel}' names both lanes"));
                }
                found = Some(lane);
            }
            _ => {}
        }
        rest = &rest[pos + 4..];
    }
    found.ok_or_else(|| format!("channel '{channel}' has no 'Lane 1' or 'Lane 2' designator"))
}

/// Writes records in the worksheet layout accepted by [`parse_worksheet_with`].
pub fn write_vehicle_worksheet<W: Write>(
    records: &[VehicleRecord],
    writer: W,
    invert: bool,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        let lane = match (r.direction, invert) {
            (Direction::Enter, false) | (Direction::Exit, true) => "Lane 1",
            _ => "Lane 2",
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.timestamp.format("%-m/%-d/%Y").to_string(),
            r.timestamp.format("%-I:%M:%S %p").to_string(),
            lane.to_string(),
            r.speed_mph.to_string(),
            r.wheelbase_ft.to_string(),
            opt(r.gap_ft),
            opt(r.headway_s),
            r.vehicle_class.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn parse(text: &str, invert: bool) -> Result<Vec<VehicleRecord>, ParseError> {
        parse_worksheet_with(text.as_bytes(), invert, "c1")
    }

    #[test]
    fn parses_night_entry_row() {
        let recs = parse(
            "Date,Time,Channel\n1/15/2025,3:31:25 AM,\"B to C, Lane 1\"\n",
            false,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        let expected = NaiveDate::from_ymd_opt(2025, 1, 15)
            .unwrap()
            .and_hms_opt(3, 31, 25)
            .unwrap();
        assert_eq!(recs[0].timestamp, expected);
        assert_eq!(recs[0].direction, Direction::Enter);
        assert_eq!(recs[0].wheelbase_ft, 0.0);
        assert_eq!(recs[0].gap_ft, None);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("Date,Time,Channel,Speed\n", false)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn inversion_flag_flips_lane_two() {
        let recs = parse(
            "Date,Time,Channel\n1/14/2025,8:15:24 PM,\"C to B, Lane 2\"\n",
            true,
        )
        .unwrap();
        assert_eq!(recs[0].direction, Direction::Enter);
        let recs = parse(
            "Date,Time,Channel\n1/14/2025,8:15:24 PM,\"C to B, Lane 2\"\n",
            false,
        )
        .unwrap();
        assert_eq!(recs[0].direction, Direction::Exit);
        assert_eq!(recs[0].timestamp.format("%H:%M:%S").to_string(), "20:15:24");
    }

    #[test]
    fn optional_columns_are_read() {
        let text = "Date,Time,Channel,Speed,Wheelbase,Gap,Headway,Class\n\
                    1/13/2025,10:00:00 AM,Lane 1,7.5,9.25,12,3.5,2\n\
                    1/13/2025,10:00:01 AM,Lane 2,0,0,,,\n";
        let recs = parse(text, false).unwrap();
        assert_eq!(recs[0].speed_mph, 7.5);
        assert_eq!(recs[0].wheelbase_ft, 9.25);
        assert_eq!(recs[0].gap_ft, Some(12.0));
        assert_eq!(recs[0].headway_s, Some(3.5));
        assert_eq!(recs[0].vehicle_class, Some(2));
        assert_eq!(recs[1].gap_ft, None);
        assert_eq!(recs[1].vehicle_class, None);
    }

    #[test]
    fn bad_date_reports_line() {
        let err = parse(
            "Date,Time,Channel\n1/13/2025,10:00:00 AM,Lane 1\n13/45/2025,10:00:00 AM,Lane 1\n",
            false,
        )
        .unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("date"));
    }

    #[test]
    fn missing_lane_is_rejected() {
        let err = parse("Date,Time,Channel\n1/13/2025,10:00:00 AM,B to C\n", false).unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse("Date,Time,Channel\n1/13/2025,10:00:00 AM,Lane 3\n", false).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn missing_column_is_line_one() {
        let err = parse("Date,Channel\n", false).unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("Time"));
    }

    #[test]
    fn unsorted_rows_are_kept_in_file_order() {
        let recs = parse(
            "Date,Time,Channel\n1/13/2025,11:00:00 AM,Lane 1\n1/13/2025,10:00:00 AM,Lane 2\n",
            false,
        )
        .unwrap();
        assert!(recs[0].timestamp > recs[1].timestamp);
    }

    fn arb_record() -> impl Strategy<Value = VehicleRecord> {
        (
            0i64..(400 * 86_400),
            any::<bool>(),
            0.0f64..60.0,
            prop_oneof![Just(0.0f64), 1.0f64..40.0],
            proptest::option::of(0.0f64..500.0),
            proptest::option::of(0.0f64..3600.0),
            proptest::option::of(1u8..14),
        )
            .prop_map(|(secs, enter, speed, wb, gap, headway, class)| {
                let base = NaiveDate::from_ymd_opt(2025, 1, 1)
                    .unwrap()
                    .and_hms_opt(0, 0, 0)
                    .unwrap();
                VehicleRecord {
                    timestamp: base + chrono::Duration::seconds(secs),
                    direction: if enter {
                        Direction::Enter
                    } else {
                        Direction::Exit
                    },
                    speed_mph: speed,
                    wheelbase_ft: wb,
                    gap_ft: gap,
                    headway_s: headway,
                    vehicle_class: class,
                    counter_id: "c1".into(),
                }
            })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(records in proptest::collection::vec(arb_record(), 0..40), invert in any::<bool>()) {
            let mut buf = Vec::new();
            write_vehicle_worksheet(&records, &mut buf, invert).unwrap();
            let back = parse_worksheet_with(buf.as_slice(), invert, "c1").unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
