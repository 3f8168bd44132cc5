use super::{Discussion, Tag, TranscriptError, Turn, MAX_SPEAKER_CHARS, MAX_SPEAKER_WORDS, NEXUS};
use crate::transcript::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Preamble,
    Setup,
    Body,
    AiBlock,
    Done,
}

/// Split `Name: text` into its speaker and utterance.
///
/// The name is everything before the first `:`; it must be non-empty, at
/// most [`MAX_SPEAKER_CHARS`] characters and [`MAX_SPEAKER_WORDS`] words, and
/// free of brackets. The colon must be followed by whitespace or end of line,
/// so `http://` and `10:30` never open a turn. Returns `None` for lines that
/// are not speaker lines; the utterance may be empty.
pub fn split_speaker_line(line: &str) -> Option<(&str, &str)> {
    let idx = line.find(':')?;
    let name = line[..idx].trim();
    let rest = &line[idx + 1..];
    if name.is_empty()
        || name.chars().count() > MAX_SPEAKER_CHARS
        || name.split_whitespace().count() > MAX_SPEAKER_WORDS
        || name.contains(['[', ']'])
    {
        return None;
    }
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((name, rest.trim()))
}

fn append(text: &mut String, more: &str) {
    if more.is_empty() {
        return;
    }
    if !text.is_empty() {
        text.push(' ');
    }
    text.push_str(more);
}

/// Parse a canonical transcript.
///
/// Prose before the first tag and anything after `[/DISCUSSION_END]` is
/// ignored. Inside the discussion, lines without a `Name:` prefix continue
/// the previous human turn.
pub fn parse_transcript(raw: &str) -> Result<Discussion, TranscriptError> {
    let mut phase = Phase::Preamble;
    let mut setup: Option<Vec<&str>> = None;
    let mut turns: Vec<Turn> = Vec::new();
    let mut ai_seen = false;
    let mut ai_open_line = 0;
    let mut ai_speaker: Option<String> = None;
    let mut ai_text = String::new();

    for (idx, raw_line) in raw.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let trimmed = line.trim();
        let tag = Tag::from_line(trimmed);

        match phase {
            Phase::Preamble => match tag {
                Some(Tag::SetupOpen) if setup.is_none() => {
                    setup = Some(Vec::new());
                    phase = Phase::Setup;
                }
                Some(Tag::DiscussionStart) => phase = Phase::Body,
                Some(Tag::SetupClose) => {
                    return Err(TranscriptError::MissingTag { tag: Tag::SetupOpen, line: Some(lineno) })
                }
                Some(Tag::SetupOpen) => return Err(TranscriptError::UnexpectedTag { tag: Tag::SetupOpen, line: lineno }),
                Some(_) => {
                    return Err(TranscriptError::MissingTag { tag: Tag::DiscussionStart, line: Some(lineno) })
                }
                None => {}
            },
            Phase::Setup => match tag {
                Some(Tag::SetupClose) => phase = Phase::Preamble,
                Some(_) => {
                    return Err(TranscriptError::MissingTag { tag: Tag::SetupClose, line: Some(lineno) })
                }
                None => setup.get_or_insert_with(Vec::new).push(line),
            },
            Phase::Body => match tag {
                Some(Tag::AiOpen) => {
                    if ai_seen {
                        return Err(TranscriptError::DuplicateAiBlock { line: lineno });
                    }
                    ai_seen = true;
                    ai_open_line = lineno;
                    phase = Phase::AiBlock;
                }
                Some(Tag::AiClose) => {
                    return Err(TranscriptError::MissingTag { tag: Tag::AiOpen, line: Some(lineno) })
                }
                Some(Tag::DiscussionEnd) => phase = Phase::Done,
                Some(t) => return Err(TranscriptError::UnexpectedTag { tag: t, line: lineno }),
                None if trimmed.is_empty() => {}
                None => match split_speaker_line(trimmed) {
                    Some((_, "")) => {
                        return Err(TranscriptError::MalformedSpeakerLine {
                            line: lineno,
                            reason: "empty utterance".into(),
                        })
                    }
                    Some((name, text)) => turns.push(Turn::human(name, text)),
                    None => match turns.last_mut() {
                        Some(last) if !last.is_ai() => append(&mut last.text, trimmed),
                        _ => return Err(TranscriptError::OrphanLine { line: lineno }),
                    },
                },
            },
            Phase::AiBlock => match tag {
                Some(Tag::AiClose) => {
                    if ai_text.is_empty() {
                        return Err(TranscriptError::EmptyAiBlock { line: ai_open_line });
                    }
                    turns.push(Turn {
                        speaker: ai_speaker.take().unwrap_or_else(|| NEXUS.to_string()),
                        role: Role::Ai,
                        text: std::mem::take(&mut ai_text),
                    });
                    phase = Phase::Body;
                }
                Some(Tag::AiOpen) => return Err(TranscriptError::DuplicateAiBlock { line: lineno }),
                Some(Tag::DiscussionEnd) => {
                    return Err(TranscriptError::MissingTag { tag: Tag::AiClose, line: Some(lineno) })
                }
                Some(t) => return Err(TranscriptError::UnexpectedTag { tag: t, line: lineno }),
                None if trimmed.is_empty() => {}
                None => match split_speaker_line(trimmed) {
                    Some((name, text)) if ai_speaker.is_none() && ai_text.is_empty() => {
                        ai_speaker = Some(name.to_string());
                        append(&mut ai_text, text);
                    }
                    Some((name, text)) if ai_speaker.as_deref() == Some(name) => append(&mut ai_text, text),
                    _ => append(&mut ai_text, trimmed),
                },
            },
            Phase::Done => {}
        }
    }

    match phase {
        Phase::Preamble => return Err(TranscriptError::MissingTag { tag: Tag::DiscussionStart, line: None }),
        Phase::Setup => return Err(TranscriptError::MissingTag { tag: Tag::SetupClose, line: None }),
        Phase::Body => return Err(TranscriptError::MissingTag { tag: Tag::DiscussionEnd, line: None }),
        Phase::AiBlock => return Err(TranscriptError::MissingTag { tag: Tag::AiClose, line: None }),
        Phase::Done => {}
    }
    if turns.is_empty() {
        return Err(TranscriptError::EmptyDiscussion);
    }

    Ok(Discussion {
        scenario_setup: setup.map(|lines| lines.join("\n").trim().to_string()),
        turns,
        source_scenario: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIG_EXAMPLE;

    #[test]
    fn figure_example_parses() {
        let d = parse_transcript(FIG_EXAMPLE).unwrap();
        let speakers: Vec<&str> = d.turns.iter().map(|t| t.speaker.as_str()).collect();
        assert_eq!(speakers, ["John", "Emily", "Mike", "Sarah", "Nexus", "John", "Emily"]);
        assert_eq!(d.intervention_index(), Some(4));
        assert!(d.turns[4].text.starts_with("Actually, the origins of 911"));
        assert!(d.turns[4].text.ends_with("had a hand in selecting the number."));
        assert_eq!(d.turns.iter().filter(|t| !t.is_ai()).count(), 6);
        let setup = d.scenario_setup.as_deref().unwrap();
        assert!(setup.starts_with("Topic: Why is 911, 911?"));
    }

    #[test]
    fn empty_discussion() {
        let raw = "[DISCUSSION_START]\n[/DISCUSSION_END]\n";
        assert_eq!(parse_transcript(raw), Err(TranscriptError::EmptyDiscussion));
    }

    #[test]
    fn duplicate_ai_block() {
        let raw = "[DISCUSSION_START]\nA: one\n[AI_APPEARED]\nNexus: x\n[/AI_DISAPPEARED]\nB: two\n[AI_APPEARED]\nNexus: y\n[/AI_DISAPPEARED]\nA: three\n[/DISCUSSION_END]\n";
        assert_eq!(parse_transcript(raw), Err(TranscriptError::DuplicateAiBlock { line: 7 }));
    }

    #[test]
    fn continuation_lines_join_previous_turn() {
        let raw = "[DISCUSSION_START]\nAnn: first part\nsecond part\n\nBob: hi\n[AI_APPEARED]\nNexus: line one\nline two\n[/AI_DISAPPEARED]\nAnn: ok\n[/DISCUSSION_END]";
        let d = parse_transcript(raw).unwrap();
        assert_eq!(d.turns[0].text, "first part second part");
        assert_eq!(d.turns[2].text, "line one line two");
        assert_eq!(d.turns[2].speaker, "Nexus");
    }

    #[test]
    fn orphan_line_before_first_speaker() {
        let raw = "[DISCUSSION_START]\njust some words\nAnn: hi\n[/DISCUSSION_END]\n";
        assert_eq!(parse_transcript(raw), Err(TranscriptError::OrphanLine { line: 2 }));
    }

    #[test]
    fn orphan_line_after_ai_block() {
        let raw = "[DISCUSSION_START]\nAnn: hi\n[AI_APPEARED]\nNexus: x\n[/AI_DISAPPEARED]\nloose\nBob: ok\n[/DISCUSSION_END]\n";
        assert_eq!(parse_transcript(raw), Err(TranscriptError::OrphanLine { line: 6 }));
    }

    #[test]
    fn malformed_speaker_line() {
        let raw = "[DISCUSSION_START]\nAnn:\n[/DISCUSSION_END]\n";
        assert!(matches!(parse_transcript(raw), Err(TranscriptError::MalformedSpeakerLine { line: 2, .. })));
    }

    #[test]
    fn missing_tags() {
        let cases = [
            ("Ann: hi\n[/DISCUSSION_END]\n", Tag::DiscussionStart),
            ("[DISCUSSION_START]\nAnn: hi\n", Tag::DiscussionEnd),
            ("[DISCUSSION_START]\nAnn: hi\nNexus: x\n[/AI_DISAPPEARED]\n[/DISCUSSION_END]\n", Tag::AiOpen),
            ("[DISCUSSION_START]\nAnn: hi\n[AI_APPEARED]\nNexus: x\nBob: y\n[/DISCUSSION_END]\n", Tag::AiClose),
            ("[SCENARIO_SETUP]\nsetup\n[DISCUSSION_START]\nAnn: hi\n[/DISCUSSION_END]\n", Tag::SetupClose),
            ("setup\n[/SCENARIO_SETUP]\n[DISCUSSION_START]\nAnn: hi\n[/DISCUSSION_END]\n", Tag::SetupOpen),
        ];
        for (raw, want) in cases {
            match parse_transcript(raw) {
                Err(TranscriptError::MissingTag { tag, .. }) => assert_eq!(tag, want, "{raw}"),
                other => panic!("{raw:?}: expected MissingTag({want}), got {other:?}"),
            }
        }
    }

    #[test]
    fn speaker_line_grammar() {
        assert_eq!(split_speaker_line("John: hi: there"), Some(("John", "hi: there")));
        assert_eq!(split_speaker_line("Dr. Jane Smith: ok"), Some(("Dr. Jane Smith", "ok")));
        assert_eq!(split_speaker_line("see http://x"), None);
        assert_eq!(split_speaker_line("at 10:30 we met"), None);
        assert_eq!(split_speaker_line("one two three four five: x"), None);
        assert_eq!(split_speaker_line(": x"), None);
        assert_eq!(split_speaker_line("[X]: y"), None);
    }

    #[test]
    fn crlf_and_preamble_tolerated() {
        let raw = "Here is the transcript:\r\n[DISCUSSION_START]\r\nAnn: hi\r\n[AI_APPEARED]\r\nNexus: x\r\n[/AI_DISAPPEARED]\r\nBob: ok\r\n[/DISCUSSION_END]\r\nHope this helps!";
        let d = parse_transcript(raw).unwrap();
        assert_eq!(d.turns.len(), 3);
        assert_eq!(d.turns[2].text, "ok");
    }
}
