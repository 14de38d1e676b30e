//! Prediction from trained networks: per-layer goodness, layer-interval
//! ensembling, linear probes on frozen features and goodness maps.

mod goodness_map;
mod probe;
mod sip;

pub use goodness_map::{
    export_goodness_maps, goodness_maps, goodness_maps_to_csv, parse_goodness_maps, GoodnessMaps,
};
pub use probe::{linear_probe, LinearProbe, ProbeConfig};
pub use sip::{
    per_layer_accuracy, sip_accuracy, sip_predict, sip_select, traces_from_layers, GoodnessTrace,
    LayerAccuracy, SipInterval,
};
