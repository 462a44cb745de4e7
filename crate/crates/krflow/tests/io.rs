use krflow::checkpoint::{decode_field, encode_field, FieldHeader};
use krflow::output::{fmt_f64, parse_csv, CSV_HEADER};
use krflow::sweep::observed_orders;
use proptest::prelude::*;

#[test]
fn csv_header_lists_the_documented_columns() {
    let cols: Vec<&str> = CSV_HEADER.split(',').collect();
    assert_eq!(cols.len(), 17);
    assert_eq!(cols[0], "t");
    assert_eq!(cols[16], "vol_err");
    assert!(cols.contains(&"sup_R") && cols.contains(&"cp_proxy") && cols.contains(&"nu"));
}

#[test]
fn numbers_are_written_with_seventeen_digits() {
    assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
}

#[test]
fn csv_with_foreign_header_is_rejected() {
    assert!(parse_csv("a,b\n1,2\n").is_none());
    let text = format!("{CSV_HEADER}\n{}\n", vec!["1"; 17].join(","));
    assert_eq!(parse_csv(&text).unwrap(), vec![vec![1.0; 17]]);
}

#[test]
fn truncated_field_file_is_rejected() {
    let h = FieldHeader { n: 1, nodes_per_axis: 9, half_width: 3.0 };
    let bytes = encode_field(h, &[1.0, 2.0]);
    assert_eq!(bytes.len(), 40);
    assert!(decode_field(&bytes[..39]).is_none());
    assert!(decode_field(&bytes[..20]).is_none());
}

#[test]
fn observed_order_of_exact_power_law() {
    let dts = [0.1, 0.05, 0.025];
    let diffs: Vec<f64> = dts.iter().map(|h: &f64| 3.0 * h.powi(4)).collect();
    for o in observed_orders(&dts, &diffs) {
        assert!((o - 4.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn field_encoding_round_trips(
        n in 1u64..3,
        nodes in 9u64..1000,
        half_width in 0.1f64..30.0,
        values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..200),
    ) {
        let h = FieldHeader { n, nodes_per_axis: nodes, half_width };
        let (h2, v2) = decode_field(&encode_field(h, &values)).unwrap();
        prop_assert_eq!(h2, h);
        prop_assert_eq!(v2, values);
    }

    #[test]
    fn formatted_numbers_parse_back_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}
