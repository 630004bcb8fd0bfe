//! Synthetic ICU-style cohort generator and a small companion reference
//! corpus, standing in for access-restricted clinical datasets.
//!
//! Labels follow a documented latent rule so downstream attribution tests
//! can check that the right features matter:
//!
//! ```text
//! u = 1.3·z(lactate_last) + 1.0·z(creatinine_last) − 1.1·z(spo2_last)
//!     + 0.9·(resp_rate_slope / 1.2) + RISK_BIAS
//! y ~ Bernoulli(sigmoid(u))
//! ```
//!
//! where `z(·)` standardizes with the generator's own population parameters
//! and the slope is the patient's latent per-visit respiratory-rate trend.
//! `RISK_BIAS` was calibrated once against the target ~12% positive rate and
//! is frozen. The three signal features sit at [`SIGNAL_FEATURES`] and the
//! trend feature at [`TREND_FEATURE`]; every other feature carries no label
//! information. Dynamic cells are masked missing with probability 0.2;
//! static columns (age, sex, present when F ≥ 8) are always observed.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FeatureKind, FeatureSpec, PatientRecord};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::retrieval::CorpusDoc;

/// Column indices whose last-visit values drive the outcome.
pub const SIGNAL_FEATURES: [usize; 3] = [0, 1, 2];
/// Column index whose per-visit slope drives the outcome.
pub const TREND_FEATURE: usize = 3;

/// Intercept of the latent risk rule; calibrated once for ~12% positives.
const RISK_BIAS: f64 = -3.35;

/// Per-cell missingness probability for dynamic features.
const MISSING_RATE: f64 = 0.2;

struct FeatureDef {
    name: &'static str,
    unit: &'static str,
    mean: f64,
    sd: f64,
    visit_noise: f64,
}

const CATALOG: [FeatureDef; 8] = [
    FeatureDef { name: "lactate", unit: "mmol/L", mean: 2.0, sd: 1.0, visit_noise: 0.3 },
    FeatureDef { name: "creatinine", unit: "mg/dL", mean: 1.2, sd: 0.6, visit_noise: 0.15 },
    FeatureDef { name: "spo2", unit: "%", mean: 94.0, sd: 4.0, visit_noise: 1.5 },
    FeatureDef { name: "respiratory_rate", unit: "breaths/min", mean: 20.0, sd: 4.0, visit_noise: 1.5 },
    FeatureDef { name: "heart_rate", unit: "bpm", mean: 88.0, sd: 15.0, visit_noise: 5.0 },
    FeatureDef { name: "systolic_bp", unit: "mmHg", mean: 120.0, sd: 18.0, visit_noise: 6.0 },
    FeatureDef { name: "temperature", unit: "degC", mean: 37.2, sd: 0.8, visit_noise: 0.3 },
    FeatureDef { name: "wbc_count", unit: "10^9/L", mean: 9.0, sd: 3.5, visit_noise: 1.0 },
];

/// Per-visit standard deviation of the latent respiratory-rate slope.
const TREND_SLOPE_SD: f64 = 1.2;

/// Generates `n_patients` records with `f` features and 2..=`t_max` visits.
///
/// Identical arguments produce a bit-identical dataset.
pub fn generate_synthetic(
    n_patients: usize,
    f: usize,
    t_max: usize,
    seed: u64,
) -> Result<(Vec<FeatureSpec>, Vec<PatientRecord>)> {
    if n_patients < 10 {
        return Err(Error::parameter("n_patients", "need at least 10 patients"));
    }
    if f < 4 {
        return Err(Error::parameter(
            "f",
            "need at least 4 features (three signal features plus the trend feature)",
        ));
    }
    if t_max < 2 {
        return Err(Error::parameter("t_max", "need at least 2 visits"));
    }

    let with_static = f >= 8;
    let n_dynamic = if with_static { f - 2 } else { f };
    let mut specs: Vec<FeatureSpec> = Vec::with_capacity(f);
    for j in 0..n_dynamic {
        if j < CATALOG.len() {
            specs.push(FeatureSpec::new(CATALOG[j].name, FeatureKind::Dynamic, CATALOG[j].unit));
        } else {
            specs.push(FeatureSpec::new(&format!("lab_{j}"), FeatureKind::Dynamic, ""));
        }
    }
    if with_static {
        specs.push(FeatureSpec::new("age", FeatureKind::Static, "years"));
        specs.push(FeatureSpec::new("sex", FeatureKind::Static, "0=female,1=male"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let width = n_patients.to_string().len().max(5);

    let mut records = Vec::with_capacity(n_patients);
    for p in 0..n_patients {
        let t = rng.gen_range(2..=t_max);
        let age = (65.0 + 12.0 * unit_normal.sample(&mut rng)).clamp(18.0, 95.0).round();
        let sex = rng.gen_range(0..2) as f64;

        // Per-patient baselines and the latent trend slope.
        let mut baselines = Vec::with_capacity(n_dynamic);
        for j in 0..n_dynamic {
            let (mean, sd) = def_params(j);
            baselines.push(mean + sd * unit_normal.sample(&mut rng));
        }
        let slope = TREND_SLOPE_SD * unit_normal.sample(&mut rng);

        // True (pre-masking) visit values.
        let mut series = vec![vec![0.0f64; f]; t];
        for (visit, row) in series.iter_mut().enumerate() {
            for j in 0..n_dynamic {
                let noise = def_noise(j) * unit_normal.sample(&mut rng);
                let trend = if j == TREND_FEATURE { slope * visit as f64 } else { 0.0 };
                row[j] = baselines[j] + trend + noise;
            }
            if with_static {
                row[f - 2] = age;
                row[f - 1] = sex;
            }
        }

        let last = series[t - 1].clone();
        let z = |j: usize, v: f64| {
            let (mean, sd) = def_params(j);
            (v - mean) / sd
        };
        let u = 1.3 * z(0, last[0]) + 1.0 * z(1, last[1]) - 1.1 * z(2, last[2])
            + 0.9 * (slope / TREND_SLOPE_SD)
            + RISK_BIAS;
        let label = (rng.gen::<f64>() < sigmoid(u)) as u8;

        // Mask dynamic cells.
        let mut mask = vec![vec![true; f]; t];
        for row in 0..t {
            for j in 0..n_dynamic {
                if rng.gen::<f64>() < MISSING_RATE {
                    mask[row][j] = false;
                    series[row][j] = f64::NAN;
                }
            }
        }

        let mut static_info = BTreeMap::new();
        static_info.insert("age".to_string(), serde_json::json!(age as i64));
        static_info.insert(
            "sex".to_string(),
            serde_json::json!(if sex > 0.5 { "male" } else { "female" }),
        );
        static_info.insert(
            "condition".to_string(),
            serde_json::json!(condition_summary(&last, slope)),
        );

        records.push(PatientRecord {
            patient_id: format!("synth-{p:0width$}"),
            static_info,
            series,
            mask,
            label,
        });
    }
    Ok((specs, records))
}

fn def_params(j: usize) -> (f64, f64) {
    if j < CATALOG.len() {
        (CATALOG[j].mean, CATALOG[j].sd)
    } else {
        (0.0, 1.0)
    }
}

fn def_noise(j: usize) -> f64 {
    if j < CATALOG.len() {
        CATALOG[j].visit_noise
    } else {
        0.5
    }
}

fn condition_summary(last: &[f64], slope: f64) -> String {
    let resp = if slope > 0.3 {
        "respiratory rate trending upward"
    } else if slope < -0.3 {
        "respiratory rate trending downward"
    } else {
        "stable respiratory rate"
    };
    format!(
        "ICU admission. Latest lactate {:.1} mmol/L, creatinine {:.2} mg/dL, SpO2 {:.0}%, {}.",
        last[0], last[1], last[2], resp
    )
}

/// A compact synthetic medical-reference corpus covering the generated
/// features, used as the retrieval knowledge base for offline runs.
pub fn guideline_docs() -> Vec<CorpusDoc> {
    let docs: [(&str, &str, &str); 12] = [
        (
            "guide-lactate",
            "Serum lactate and tissue hypoperfusion",
            "Serum lactate is a marker of tissue hypoperfusion and anaerobic metabolism. \
             Persistently elevated lactate above 2 mmol/L is associated with increased \
             in-hospital mortality in critically ill patients, and values above 4 mmol/L \
             identify a high-risk group even with normal blood pressure. Serial lactate \
             measurement is recommended: failure of lactate to clear by 10 to 20 percent \
             within the first hours of resuscitation predicts poor outcome. Lactate \
             elevation accompanies septic shock, cardiogenic shock, mesenteric ischemia \
             and severe hypoxemia. Treatment targets the underlying cause; fluid \
             resuscitation and restoration of perfusion usually lower lactate. In \
             interpretation, consider confounders such as hepatic dysfunction, which \
             slows lactate clearance, and medications including metformin and \
             epinephrine that raise lactate independently of perfusion.",
        ),
        (
            "guide-creatinine",
            "Creatinine, acute kidney injury and outcomes",
            "Serum creatinine reflects glomerular filtration and muscle mass. A rise of \
             0.3 mg/dL within 48 hours or 1.5 times baseline within 7 days defines acute \
             kidney injury. Acute kidney injury in the intensive care unit is independently \
             associated with mortality, and the association strengthens with stage: \
             patients requiring renal replacement therapy have the highest risk. Rising \
             creatinine in a deteriorating patient suggests hypoperfusion, nephrotoxic \
             exposure or intra-abdominal hypertension. Management includes volume status \
             optimization, avoidance of nephrotoxins, and timely renal replacement when \
             refractory acidosis, hyperkalemia or volume overload develops. Creatinine \
             lags true filtration changes by one to two days, so trends matter more than \
             single values.",
        ),
        (
            "guide-spo2",
            "Oxygen saturation and hypoxemic respiratory failure",
            "Peripheral oxygen saturation below 90 percent indicates hypoxemia and, when \
             persistent despite supplemental oxygen, hypoxemic respiratory failure. Low \
             SpO2 correlates with mortality in pneumonia, acute respiratory distress \
             syndrome and sepsis. Saturation targets of 92 to 96 percent are reasonable \
             for most critically ill adults; both sustained hypoxemia and extreme \
             hyperoxia are harmful. A falling saturation despite escalating oxygen \
             delivery should prompt evaluation for shunt physiology, ventilation \
             perfusion mismatch, or equipment failure, and consideration of noninvasive \
             ventilation or intubation. Pulse oximetry can overestimate saturation in \
             poor perfusion states, so arterial blood gas confirmation is advised when \
             readings drive major decisions.",
        ),
        (
            "guide-resp-rate",
            "Respiratory rate as an early warning sign",
            "Respiratory rate is among the earliest and most specific vital-sign markers \
             of clinical deterioration. A rising respiratory rate, particularly a \
             sustained upward trend above 22 to 24 breaths per minute, precedes many \
             cases of cardiac arrest and unplanned intensive care admission. Tachypnea \
             reflects metabolic acidosis, hypoxemia, pain, or increased dead space, and \
             in sepsis it is a component of quick bedside severity scores. Serial \
             measurement matters: an upward slope over successive observations carries \
             more prognostic weight than any single reading. Bradypnea in an obtunded \
             patient signals impending respiratory arrest and warrants immediate airway \
             assessment.",
        ),
        (
            "guide-heart-rate",
            "Heart rate abnormalities in acute illness",
            "Sinus tachycardia in acute illness is a compensatory response to fever, \
             hypovolemia, pain, or low stroke volume. Persistent tachycardia above 100 \
             beats per minute after adequate resuscitation is associated with worse \
             outcomes in sepsis and heart failure. New atrial fibrillation with rapid \
             ventricular response complicates critical illness and independently \
             predicts mortality. Relative bradycardia with hypotension suggests \
             conduction disease, beta blockade, or high spinal injury. Management \
             addresses the underlying driver before rate control, except when the \
             rhythm itself causes instability.",
        ),
        (
            "guide-bp",
            "Blood pressure targets in shock",
            "Systolic blood pressure below 90 mmHg, or a mean arterial pressure below \
             65 mmHg, defines hypotension requiring urgent attention in most adults. \
             Sustained hypotension despite fluid resuscitation defines shock and \
             mandates vasopressor support. The magnitude and duration of hypotension \
             correlate with acute kidney injury, myocardial injury and death. Extreme \
             hypertension in the critically ill is less immediately dangerous but \
             complicates intracranial hemorrhage and aortic syndromes. Blood pressure \
             trends should be interpreted together with perfusion markers such as \
             lactate, urine output and mental status.",
        ),
        (
            "guide-temperature",
            "Fever and hypothermia in the intensive care unit",
            "Fever above 38.3 degrees Celsius in the intensive care unit most often \
             reflects infection but also occurs with drug reactions, venous \
             thromboembolism and neurologic injury. Hypothermia below 36 degrees in \
             sepsis carries a worse prognosis than fever, reflecting failed host \
             response. Temperature should be interpreted with white blood cell count \
             and culture data. Routine suppression of moderate fever is not beneficial \
             outside acute brain injury; source control and antimicrobial therapy take \
             priority.",
        ),
        (
            "guide-wbc",
            "White blood cell count interpretation",
            "Leukocytosis above 12 x 10^9 per liter accompanies infection, steroid \
             exposure, and physiologic stress; leukopenia below 4 x 10^9 per liter in \
             the setting of suspected infection is an ominous sign of immune \
             exhaustion. Both extremes satisfy systemic inflammatory response criteria. \
             A rising white count with left shift and hemodynamic deterioration \
             suggests uncontrolled infection and should trigger reassessment of source \
             control. Neutropenic patients require empiric broad-spectrum coverage at \
             fever onset.",
        ),
        (
            "guide-sepsis",
            "Sepsis recognition and mortality risk",
            "Sepsis is life-threatening organ dysfunction caused by a dysregulated host \
             response to infection. Screening combines vital signs and laboratory \
             markers: tachypnea, altered mentation, hypotension, elevated lactate, \
             rising creatinine and abnormal white blood cell count. Mortality rises \
             steeply with the number of dysfunctional organ systems and with delays in \
             antimicrobial therapy. Management bundles emphasize early cultures, \
             broad-spectrum antimicrobials within one hour, measured fluid \
             resuscitation, and vasopressors for persistent hypotension. Reassessment \
             of lactate clearance and perfusion within six hours is standard.",
        ),
        (
            "guide-risk-scores",
            "Severity scoring and mortality prediction",
            "Severity-of-illness scores summarize physiologic derangement into a \
             mortality estimate. Inputs typically include age, vital signs such as \
             heart rate, respiratory rate, blood pressure and temperature, and \
             laboratory values including creatinine, white blood cell count and \
             oxygenation. Scores discriminate well at the population level but \
             individual predictions carry uncertainty, so they support rather than \
             replace clinical judgment. Serial scoring captures trajectory: a \
             worsening score over the first days of admission is more informative \
             than the admission value alone.",
        ),
        (
            "guide-elderly",
            "Age and outcomes of critical illness",
            "Advanced age is an independent risk factor for death after intensive care \
             admission, mediated by diminished physiologic reserve, comorbidity burden \
             and frailty. Age alone, however, is a poor triage criterion: fit older \
             patients frequently survive with good function, while frailty predicts \
             poor outcome at any age. Decisions should weigh pre-admission functional \
             status, patient goals, and trajectory of the acute illness alongside \
             chronologic age.",
        ),
        (
            "guide-ventilation",
            "Mechanical ventilation and respiratory support",
            "Indications for invasive mechanical ventilation include refractory \
             hypoxemia, ventilatory failure with rising carbon dioxide, and inability \
             to protect the airway. Lung-protective settings with low tidal volumes \
             reduce mortality in acute respiratory distress syndrome. Noninvasive \
             ventilation and high-flow nasal oxygen are alternatives for selected \
             patients but delayed intubation after failed noninvasive support worsens \
             outcomes. Daily assessment of readiness to wean, paired spontaneous \
             awakening and breathing trials, shortens ventilation duration.",
        ),
    ];
    docs.iter()
        .map(|(id, title, text)| CorpusDoc {
            id: id.to_string(),
            title: title.to_string(),
            text: text.to_string(),
        })
        .collect()
}
