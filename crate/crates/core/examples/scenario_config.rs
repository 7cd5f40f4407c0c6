//! Load a scenario from TOML, report violations, and print derived sizes.

use cfdfrc::scenario::Scenario;

const TEXT: &str = r#"
[system]
num_aps = 3
num_users = 2
tx_antennas = 4
rx_antennas = 2
subcarriers = 8

[powers]
p_max_dl_dbm = 30.0
p_max_ul_dbm = 15.0

[cfo]
cfo_min = -150.0
cfo_max = 150.0
"#;

fn main() {
    let s = Scenario::from_toml_str(TEXT).expect("valid scenario");
    println!("APs {} users {} N {} M {} S {}", s.num_aps, s.num_users, s.tx_antennas, s.rx_antennas, s.subcarriers);
    println!("stacked receive length {}", s.stacked_len());
    println!("ordered AP pairs {}, free CFO phases {}", s.num_pairs(), s.num_free_phases());
    println!("tx grid {:?}", s.fpa_grid(s.tx_antennas, s.tx_range));

    let broken = TEXT.replace("cfo_min = -150.0", "cfo_min = 500.0").replace("num_users = 2", "num_users = 0");
    match Scenario::from_toml_str(&broken) {
        Ok(_) => println!("unexpectedly valid"),
        Err(e) => println!("{e}"),
    }
}
