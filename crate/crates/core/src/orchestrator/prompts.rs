//! Fixed questions sent to the language and vision-language models, and the
//! inpainting prompt templates.

/// First description question for the vision-language model.
pub const Q1_BLIP: &str = "Question: What is this place (describe with fewer than 5 words)? Answer:";
/// Second description question for the vision-language model.
pub const Q2_BLIP: &str = "Question: Describe the foreground and background in detail and separately? Answer:";

/// Substrings identifying each question; used by scripted mocks.
pub const PLACE_KEY: &str = "What is this place";
pub const DETAIL_KEY: &str = "Describe the foreground and background";
pub const LAYOUT_KEY: &str = "Generate 6 rotated views";
pub const SCENE_KEY: &str = "Modify the sentence:";
pub const OBJECTS_KEY: &str = "two major foreground objects";
pub const MULTIPLE_KEY: &str = "Do we often see multiple";
pub const REPEAT_CHECK_KEY: &str = "Is there any";

/// Layout question. `place` and `detail` are the two description answers.
pub fn layout_question(place: &str, detail: &str) -> String {
    format!(
        "Given a scene with {place}, where in font of us we see {detail}. Generate 6 rotated views to describe \
         what else you see in this place, where the camera of each view rotates 60 degrees to the right (you dont \
         need to describe the original view, i.e., the first view of the 6 views you need to describe is the view \
         with 60 degree rotation angle). Dont involve redundant details, just describe the content of each view. \
         Also don't repeat the same object in different views. Don't refer to previously generated views. Generate \
         concise (< 10 words) and diverse contents for each view. Each sentence starts with: View xxx(view number, \
         from 1-6): We see..."
    )
}

/// Object-removal question.
pub fn scene_question(place: &str) -> String {
    format!(
        "Modify the sentence: {place} so that we remove all the objects from the description (e.g., 'a bedroom \
         with a bed' would become 'a bedroom'. Do not change the sentence if the description is only an object). \
         Just output the modified sentence."
    )
}

/// Asks for the two dominant foreground objects.
pub fn objects_question(place: &str, detail: &str) -> String {
    format!(
        "Given a scene with {place}, where in font of us we see {detail}. What would be the two major foreground \
         objects that we see? Use two lines to describe them where each line is in the format of \"We see: xxx (one \
         object, dont describe details, just one word for the object. Start from the most possible object. Don't \
         mention background objects like things on the wall, ceiling or floor.)\""
    )
}

/// Asks whether an object commonly appears more than once in the scene.
pub fn multiple_question(object: &str, place: &str) -> String {
    format!("Do we often see multiple {object} in a scene with {place}? Just say 'yes' or 'no' with all lower case letters.")
}

/// Vision-language check for a forbidden object in an inpainted view.
pub fn repeat_check_question(object: &str) -> String {
    format!("Question: Is there any {object} in this image? Answer:")
}

/// Positive and negative inpainting prompts for a peripheral view.
pub fn peripheral_prompt(scene: &str, line: &str, repeat: &[String]) -> (String, String) {
    if repeat.is_empty() {
        (format!("a peripheral view of {scene} where we see {line}"), String::new())
    } else {
        let negative = repeat
            .iter()
            .map(|o| format!("any type of {o}"))
            .collect::<Vec<_>>()
            .join(", ");
        (format!("a peripheral view of {scene} where we only see {line}"), negative)
    }
}

/// Lowercases, drops punctuation and whitespace, then classifies by prefix.
pub fn normalize_yes_no(answer: &str) -> Option<bool> {
    let cleaned: String = answer
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    if cleaned.starts_with("yes") {
        Some(true)
    } else if cleaned.starts_with("no") {
        Some(false)
    } else {
        None
    }
}
