//! wasm-bindgen surface. Errors cross the boundary as thrown strings.

use wasm_bindgen::prelude::*;

use crate::Playground;

#[wasm_bindgen]
pub struct Demo {
    inner: Playground,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo {
            inner: Playground::new(),
        }
    }

    pub fn frames(&self) -> String {
        self.inner.frames()
    }

    pub fn drag(&mut self, name: &str, x: f64, y: f64) -> Result<String, JsError> {
        self.inner.drag(name, x, y).map_err(|e| JsError::new(&e))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen(js_name = shadowCurve)]
pub fn shadow_curve(person_height: f64, step: f64) -> Result<String, JsError> {
    let c = crate::shadow_curve(person_height, step).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&c).expect("samples serialize"))
}

#[wasm_bindgen(js_name = replayTask)]
pub fn replay_task(name: &str) -> Result<String, JsError> {
    let r = crate::replay_task(name).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&r).expect("replay serializes"))
}

#[wasm_bindgen(js_name = taskNames)]
pub fn task_names() -> Vec<String> {
    crate::task_names().into_iter().map(String::from).collect()
}
