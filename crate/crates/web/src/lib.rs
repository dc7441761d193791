//! WebAssembly bindings for the browser demo in `www/`.

mod session;

pub use session::{Calibration, Programmed, Session};
use wasm_bindgen::prelude::*;

fn js(e: omm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo results serialize")
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, crosstalk_scale: f64) -> Result<Demo, JsError> {
        Session::new(seed.into(), crosstalk_scale).map(Demo).map_err(js)
    }

    /// Noise-free chip weights (dB, row-major 3×3) at nine heater voltages.
    pub fn measure(&self, voltages: &[f64]) -> Result<Vec<f64>, JsError> {
        self.0.measure(voltages).map(|w| w.to_vec()).map_err(js)
    }

    /// Fits `sam` or `samxt` on freshly measured data; returns JSON.
    pub fn calibrate(&mut self, n_random: u32, kind: &str) -> Result<String, JsError> {
        self.0.calibrate(n_random as usize, kind).map(|c| to_json(&c)).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn calibrated(&self) -> bool {
        self.0.is_calibrated()
    }

    pub fn predict(&self, voltages: &[f64]) -> Result<Vec<f64>, JsError> {
        self.0.predict(voltages).map(|w| w.to_vec()).map_err(js)
    }

    /// Voltages for a row-major 3×3 target in dB; returns JSON.
    pub fn program(&self, target: &[f64], multistart: u32) -> Result<String, JsError> {
        self.0.program(target, multistart as usize).map(|p| to_json(&p)).map_err(js)
    }
}
