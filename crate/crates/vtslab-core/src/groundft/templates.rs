//! Fixed instruction template pools and placeholder substitution.

/// Moment-retrieval question templates. `{query}` is replaced by the
/// annotation's query sentence; the rendered user turn is prefixed with
/// `<video>`.
pub const MR_TEMPLATES: [&str; 13] = [
    "At what point in the video did the following events occur: {query}? Output the start and end timestamps.",
    "What is the location of the moment: {query}?",
    "Find when the following event happens in the video: {query}. Give me the start and end times.",
    "Please indicate the start and end timestamps for the event: {query}.",
    "Please predict start and end time of the following moment: {query}.",
    "During which time interval does this happen in the video: {query}?",
    "Locate the moment in the video where this occurs: {query}. Provide start and end times.",
    "For the video, when does this event take place: {query}? Answer with start and end timestamps.",
    "I want to know the start and end times of the following event in the video: {query}.",
    "Could you tell me from what time to what time this happens: {query}?",
    "Can you tell me the time window of this event: {query}?",
    "Please find the timestamps that mark the occurrence of this event: {query}.",
    "Identify the start and end of the following event in the video: {query}.",
];

/// Highlight-detection question templates.
pub const HD_TEMPLATES: [&str; 7] = [
    "Please highlight the most exciting parts related to: {query}.",
    "Find the most relevant or important moments for: {query}.",
    "Which moments in the video best reflect: {query}?",
    "Highlight the key segments that correspond to: {query}.",
    "Show the most interesting clips about: {query}.",
    "What are the highlight moments for: {query}?",
    "Mark the time intervals that are most significant for: {query}.",
];

/// Substitute `{query}` into a template.
///
/// Punctuation normalization: when the (trimmed) query already ends with
/// terminal punctuation (`.`, `!` or `?`) and the template character
/// immediately after the placeholder is also terminal punctuation, that one
/// template character is dropped — so "phone." + "?" renders as "phone."
/// rather than "phone.?". Only the single adjacent character is affected.
pub fn fill_template(template: &str, query: &str) -> String {
    const PLACEHOLDER: &str = "{query}";
    let pos = template
        .find(PLACEHOLDER)
        .expect("every template contains {query}");
    let before = &template[..pos];
    let after = &template[pos + PLACEHOLDER.len()..];
    let query = query.trim();

    let mut out = String::with_capacity(template.len() + query.len());
    out.push_str(before);
    out.push_str(query);

    let mut rest = after.chars();
    if query.ends_with(['.', '!', '?']) {
        if let Some(c) = after.chars().next() {
            if matches!(c, '.' | '!' | '?') {
                rest.next();
            }
        }
    }
    out.extend(rest);
    out
}
