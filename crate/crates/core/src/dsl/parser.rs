//! Recursive-descent parser. Every production needs one token of lookahead.

use std::collections::{BTreeMap, BTreeSet};

use super::lexer::{lex, Tok, Token};
use super::{Diagnostic, Diagnostics, Pos};
use crate::calculus::{
    Annotations, Constraint, ConstraintKind, Deadline, DerivationScript, Direction, Justification,
    NodePath, PlanFragment, PlanStep, Risk, RuleArgs, RuleId, Statement, ValidationClause,
};
use crate::model::{
    fold_right, CausalLink, ChangeExpr, Domain, Environment, Model, Need, Phenomenon,
    PhenomenonKind, Problem, RefineTarget, Refinement, Role, Stakeholder,
};

type PResult<T> = Result<T, Diagnostic>;

/// A named problem from a `problem` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDecl {
    pub name: String,
    pub problem: Problem,
    pub pos: Pos,
}

pub(crate) struct Parser<'a> {
    toks: Vec<Token>,
    i: usize,
    model: Option<&'a Model>,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(src: &str, model: Option<&'a Model>) -> PResult<Self> {
        Ok(Parser {
            toks: lex(src)?,
            i: 0,
            model,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::error(self.pos(), message))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok) -> PResult<Pos> {
        if *self.peek() == tok {
            Ok(self.advance().pos)
        } else {
            self.unexpected(&tok.describe())
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<Pos> {
        if self.at_keyword(kw) {
            Ok(self.advance().pos)
        } else {
            self.unexpected(&format!("'{kw}'"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    /// Any identifier, qualified or not.
    fn qident(&mut self) -> PResult<(String, Pos)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.advance().pos;
                Ok((s, pos))
            }
            _ => self.unexpected("identifier"),
        }
    }

    /// A plain name: no qualifier, no hyphen.
    fn name(&mut self) -> PResult<(String, Pos)> {
        let pos = self.pos();
        let (s, _) = self.qident()?;
        if s.contains('.') || s.contains('-') {
            return Err(Diagnostic::error(pos, format!("'{s}' is not a simple name")));
        }
        Ok((s, pos))
    }

    fn string(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("string"),
        }
    }

    pub(crate) fn keyword_here(&self) -> Option<String> {
        match self.peek() {
            Tok::Ident(s) => Some(s.clone()),
            _ => None,
        }
    }

    pub(crate) fn pos_here(&self) -> Pos {
        self.pos()
    }

    fn at_eof(&self) -> bool {
        *self.peek() == Tok::Eof
    }

    fn model(&self) -> &'a Model {
        self.model.expect("parser used without a model")
    }

    pub(crate) fn skip_imports(&mut self) -> PResult<Vec<(String, Pos)>> {
        let mut out = Vec::new();
        while self.at_keyword("import") {
            let pos = self.advance().pos;
            out.push((self.string()?, pos));
        }
        Ok(out)
    }

    // ---------------------------------------------------------------- model

    pub(crate) fn model_block(&mut self) -> PResult<Model> {
        if !self.at_keyword("model") {
            return self.error("expected 'model'");
        }
        self.advance();
        let name = match self.peek() {
            Tok::Ident(_) => Some(self.name()?.0),
            _ => None,
        };
        self.expect(Tok::LBrace)?;

        let mut model = Model {
            name,
            ..Model::default()
        };
        let mut names_seen: BTreeMap<String, &'static str> = BTreeMap::new();
        let mut domain_pos: BTreeMap<String, Pos> = BTreeMap::new();
        let mut phen_refs: Vec<(String, Pos)> = Vec::new();
        let mut trust_refs: Vec<(String, Pos)> = Vec::new();
        let mut claim = |name: &str, what: &'static str, pos: Pos| -> PResult<()> {
            let key = format!("{what}:{name}");
            if names_seen.insert(key, what).is_some() {
                Err(Diagnostic::error(pos, format!("duplicate {what} '{name}'")))
            } else {
                Ok(())
            }
        };

        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            let (kw, kw_pos) = match self.peek().clone() {
                Tok::Ident(kw) => (kw, self.pos()),
                _ => return self.unexpected("model item or '}'"),
            };
            match kw.as_str() {
                "phenomenon" => {
                    self.advance();
                    let (pname, pos) = self.qident()?;
                    claim(&pname, "phenomenon", pos)?;
                    self.expect(Tok::Colon)?;
                    let kpos = self.pos();
                    let (kind, _) = self.qident()?;
                    let kind = kind
                        .parse::<PhenomenonKind>()
                        .map_err(|m| Diagnostic::error(kpos, m))?;
                    model.phenomena.push(Phenomenon { name: pname, kind });
                }
                "domain" | "proposed" => {
                    self.advance();
                    let proposed = kw == "proposed";
                    if proposed {
                        self.keyword("domain")?;
                    }
                    let (dname, pos) = self.name()?;
                    claim(&dname, "domain", pos)?;
                    domain_pos.insert(dname.clone(), pos);
                    let d = self.domain_body(dname, &mut phen_refs)?;
                    if proposed {
                        model.proposed.push(d);
                    } else {
                        model.state.domains.push(d);
                    }
                }
                "stakeholder" => {
                    self.advance();
                    let (sname, pos) = self.name()?;
                    claim(&sname, "stakeholder", pos)?;
                    self.expect(Tok::Colon)?;
                    let rpos = self.pos();
                    let (role, _) = self.qident()?;
                    let role = role.parse::<Role>().map_err(|m| Diagnostic::error(rpos, m))?;
                    let mut trusts = BTreeSet::new();
                    if self.eat(&Tok::LBrace) {
                        while !self.eat(&Tok::RBrace) {
                            self.keyword("trusts")?;
                            loop {
                                let (t, tpos) = self.name()?;
                                trust_refs.push((t.clone(), tpos));
                                trusts.insert(t);
                                if !self.eat(&Tok::Comma) {
                                    break;
                                }
                            }
                        }
                    }
                    model.stakeholders.push(Stakeholder {
                        name: sname,
                        role,
                        trusts,
                    });
                }
                "need" => {
                    self.advance();
                    let (nname, pos) = self.name()?;
                    claim(&nname, "need", pos)?;
                    let desc = match self.peek() {
                        Tok::Str(_) => self.string()?,
                        _ => String::new(),
                    };
                    model.needs.push((nname, desc));
                }
                _ => {
                    return Err(Diagnostic::error(
                        kw_pos,
                        format!("expected 'phenomenon', 'domain', 'proposed', 'stakeholder' or 'need', found '{kw}'"),
                    ))
                }
            }
        }

        for (p, pos) in phen_refs {
            if model.phenomenon(&p).is_none() {
                return Err(Diagnostic::error(pos, format!("undeclared phenomenon '{p}'")));
            }
        }
        for (t, pos) in trust_refs {
            if model.stakeholder(&t).is_none() {
                return Err(Diagnostic::error(pos, format!("undeclared stakeholder '{t}'")));
            }
        }
        let located = |name: &str| domain_pos.get(name).copied().unwrap_or_default();
        for d in &model.proposed {
            d.check_local()
                .map_err(|e| Diagnostic::error(located(&d.name), e.to_string()))?;
        }
        if let Err(e) = model.state.check_well_formed() {
            let culprit = match &e {
                crate::model::ModelError::MultipleControllers { domains, .. } => domains.last().cloned(),
                crate::model::ModelError::DuplicateDomain(d) => Some(d.clone()),
                crate::model::ModelError::ObservedAndControlled { domain, .. }
                | crate::model::ModelError::SelfLink { domain, .. }
                | crate::model::ModelError::ForeignLink { domain, .. }
                | crate::model::ModelError::LinkEndpoint { domain, .. } => Some(domain.clone()),
            };
            let pos = culprit.map(|c| located(&c)).unwrap_or_default();
            return Err(Diagnostic::error(pos, e.to_string()));
        }
        Ok(model)
    }

    fn domain_body(&mut self, name: String, phen_refs: &mut Vec<(String, Pos)>) -> PResult<Domain> {
        let mut d = Domain::new(name);
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            let pos = self.pos();
            let (kw, _) = self.qident()?;
            match kw.as_str() {
                "observes" | "controls" => loop {
                    let (p, ppos) = self.qident()?;
                    phen_refs.push((p.clone(), ppos));
                    let set = if kw == "observes" {
                        &mut d.observed
                    } else {
                        &mut d.controlled
                    };
                    if !set.insert(p.clone()) {
                        return Err(Diagnostic::error(ppos, format!("'{p}' listed twice")));
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                },
                "causes" => {
                    let (cause, cpos) = self.qident()?;
                    self.expect(Tok::Arrow)?;
                    let (effect, epos) = self.qident()?;
                    phen_refs.push((cause.clone(), cpos));
                    phen_refs.push((effect.clone(), epos));
                    d.links.insert(CausalLink {
                        cause,
                        effect,
                        owner: d.name.clone(),
                    });
                }
                "description" => d.description = self.string()?,
                other => {
                    return Err(Diagnostic::error(
                        pos,
                        format!("expected 'observes', 'controls', 'causes' or 'description', found '{other}'"),
                    ))
                }
            }
        }
        Ok(d)
    }

    // ---------------------------------------------------------- environments

    fn catalogue(&self, name: &str, pos: Pos) -> PResult<Domain> {
        self.model()
            .catalogue_domain(name)
            .cloned()
            .ok_or_else(|| Diagnostic::error(pos, format!("unknown domain '{name}'")))
    }

    /// `Name` or `Name[retained](added)`, resolved from the model.
    fn domain_ref(&mut self, name: String, pos: Pos) -> PResult<Domain> {
        let base = self.catalogue(&name, pos)?;
        if *self.peek() != Tok::LBracket {
            return Ok(base);
        }
        let (retained, added) = self.domain_lists()?;
        Ok(Domain::composite(&base, retained, added))
    }

    fn domain_lists(&mut self) -> PResult<(Vec<Domain>, Vec<Domain>)> {
        self.expect(Tok::LBracket)?;
        let retained = self.domain_items(Tok::RBracket)?;
        self.expect(Tok::LParen)?;
        let added = self.domain_items(Tok::RParen)?;
        Ok((retained, added))
    }

    fn domain_items(&mut self, close: Tok) -> PResult<Vec<Domain>> {
        let mut out = Vec::new();
        if self.eat(&close) {
            return Ok(out);
        }
        loop {
            let (n, pos) = self.name()?;
            out.push(self.domain_ref(n, pos)?);
            if self.eat(&close) {
                return Ok(out);
            }
            if !self.eat(&Tok::Comma) {
                return self.unexpected(&format!("',' or {}", close.describe()));
            }
        }
    }

    pub(crate) fn environment(&mut self) -> PResult<Environment> {
        let start = self.pos();
        let mut label = None;
        if let Tok::Ident(_) = self.peek() {
            label = Some(self.name()?.0);
        }
        self.expect(Tok::LBracket)?;
        let mut domains = Vec::new();
        if !self.eat(&Tok::RBracket) {
            loop {
                let (q, pos) = self.qident()?;
                let (qual, name) = match q.rsplit_once('.') {
                    Some((qual, name)) => (Some(qual.to_string()), name.to_string()),
                    None => (None, q.clone()),
                };
                if let Some(qual) = qual {
                    match &label {
                        Some(l) if *l != qual => {
                            return Err(Diagnostic::error(
                                pos,
                                format!("'{q}' does not belong to environment '{l}'"),
                            ))
                        }
                        _ => label = Some(qual),
                    }
                }
                domains.push(self.domain_ref(name, pos)?);
                if self.eat(&Tok::RBracket) {
                    break;
                }
                if !self.eat(&Tok::Comma) {
                    return self.unexpected("',' or ']'");
                }
            }
        }
        if let (Some(l), Some(m)) = (&label, &self.model().name) {
            if l != m {
                return Err(Diagnostic::error(start, format!("unknown environment '{l}'")));
            }
        }
        let env = Environment { label, domains };
        env.check_well_formed()
            .map_err(|e| Diagnostic::error(start, format!("environment is not well formed: {e}")))?;
        Ok(env)
    }

    // --------------------------------------------------------------- changes

    pub(crate) fn change(&mut self) -> PResult<ChangeExpr> {
        let mut parts = vec![self.change_seq()?];
        while self.eat(&Tok::Parallel) {
            parts.push(self.change_seq()?);
        }
        Ok(fold_right(parts, ChangeExpr::par))
    }

    fn change_seq(&mut self) -> PResult<ChangeExpr> {
        let mut parts = vec![self.change_unit()?];
        while self.eat(&Tok::Semi) {
            parts.push(self.change_unit()?);
        }
        Ok(fold_right(parts, ChangeExpr::seq))
    }

    fn change_unit(&mut self) -> PResult<ChangeExpr> {
        match self.peek().clone() {
            Tok::Question => {
                self.advance();
                Ok(ChangeExpr::Unknown(self.name()?.0))
            }
            Tok::Plus => {
                self.advance();
                let (n, pos) = self.name()?;
                Ok(ChangeExpr::Add(self.domain_ref(n, pos)?))
            }
            Tok::Bang => {
                self.advance();
                let (n, pos) = self.name()?;
                self.catalogue(&n, pos)?;
                Ok(ChangeExpr::Cancel(n))
            }
            Tok::LParen => {
                let pos = self.advance().pos;
                if self.eat(&Tok::RParen) {
                    return Ok(ChangeExpr::Skip);
                }
                let inner = self.change()?;
                self.expect(Tok::RParen)?;
                if *self.peek() != Tok::Refines {
                    return Ok(inner);
                }
                match inner {
                    ChangeExpr::Refine(r) => self.refine_tail(RefineTarget::Refined(Box::new(r))),
                    _ => Err(Diagnostic::error(pos, "only a refinement can be refined again")),
                }
            }
            Tok::Ident(_) => {
                let (n, pos) = self.name()?;
                self.catalogue(&n, pos)?;
                if *self.peek() != Tok::Refines {
                    return self.unexpected("'~>'");
                }
                self.refine_tail(RefineTarget::Domain(n))
            }
            _ => self.unexpected("change expression"),
        }
    }

    fn refine_tail(&mut self, mut target: RefineTarget) -> PResult<ChangeExpr> {
        loop {
            self.expect(Tok::Refines)?;
            self.keyword("d")?;
            let (retained, added) = self.domain_lists()?;
            let r = Refinement {
                target,
                retained,
                added,
            };
            if *self.peek() != Tok::Refines {
                return Ok(ChangeExpr::Refine(r));
            }
            target = RefineTarget::Refined(Box::new(r));
        }
    }

    // ----------------------------------------------------------------- needs

    pub(crate) fn need(&mut self) -> PResult<Need> {
        Ok(self.need_par()?.normalized())
    }

    fn need_par(&mut self) -> PResult<Need> {
        let mut parts = vec![self.need_seq()?];
        while self.eat(&Tok::Parallel) {
            parts.push(self.need_seq()?);
        }
        Ok(fold_right(parts, Need::par))
    }

    fn need_seq(&mut self) -> PResult<Need> {
        let mut parts = vec![self.need_unit()?];
        while self.eat(&Tok::Semi) {
            parts.push(self.need_unit()?);
        }
        Ok(fold_right(parts, Need::seq))
    }

    fn need_unit(&mut self) -> PResult<Need> {
        if self.eat(&Tok::LParen) {
            let n = self.need_par()?;
            self.expect(Tok::RParen)?;
            return Ok(n);
        }
        let (n, pos) = self.name()?;
        self.model()
            .need(&n)
            .ok_or_else(|| Diagnostic::error(pos, format!("unknown need '{n}'")))
    }

    fn stakeholder_ref(&mut self) -> PResult<String> {
        let (n, pos) = self.name()?;
        if self.model().stakeholder(&n).is_none() {
            return Err(Diagnostic::error(pos, format!("unknown stakeholder '{n}'")));
        }
        Ok(n)
    }

    // -------------------------------------------------------------- problems

    /// `ENV (+) CHANGE |= G : NEED`
    pub(crate) fn sequent(&mut self) -> PResult<Problem> {
        let env = self.environment()?;
        self.expect(Tok::Update)?;
        let change = self.change()?;
        self.expect(Tok::Meets)?;
        let validator = self.stakeholder_ref()?;
        self.expect(Tok::Colon)?;
        let need = self.need()?;
        Ok(Problem {
            env,
            change,
            validator,
            need,
        })
    }

    pub(crate) fn problem_block(&mut self) -> PResult<ProblemDecl> {
        if !self.at_keyword("problem") {
            return self.error("expected 'problem'");
        }
        let pos = self.advance().pos;
        let (name, _) = self.name()?;
        self.expect(Tok::LBrace)?;
        if !matches!(self.peek(), Tok::Ident(s) if matches!(s.as_str(), "env" | "change" | "validator" | "need")) {
            let problem = self.sequent()?;
            self.expect(Tok::RBrace)?;
            return Ok(ProblemDecl { name, problem, pos });
        }
        let (mut env, mut change, mut validator, mut need) = (None, None, None, None);
        loop {
            if *self.peek() == Tok::RBrace {
                break;
            }
            let kpos = self.pos();
            let (kw, _) = self.qident()?;
            let dup = || Diagnostic::error(kpos, format!("'{kw}' given twice"));
            match kw.as_str() {
                "env" => {
                    if env.replace(self.environment()?).is_some() {
                        return Err(dup());
                    }
                }
                "change" => {
                    if change.replace(self.change()?).is_some() {
                        return Err(dup());
                    }
                }
                "validator" => {
                    if validator.replace(self.stakeholder_ref()?).is_some() {
                        return Err(dup());
                    }
                }
                "need" => {
                    if need.replace(self.need()?).is_some() {
                        return Err(dup());
                    }
                }
                _ => {
                    return Err(Diagnostic::error(
                        kpos,
                        format!("expected 'env', 'change', 'validator' or 'need', found '{kw}'"),
                    ))
                }
            }
        }
        let close = self.pos();
        self.expect(Tok::RBrace)?;
        let missing = |what: &str| Diagnostic::error(close, format!("problem '{name}' has no '{what}'"));
        let problem = Problem {
            env: env.ok_or_else(|| missing("env"))?,
            change: change.ok_or_else(|| missing("change"))?,
            validator: validator.ok_or_else(|| missing("validator"))?,
            need: need.ok_or_else(|| missing("need"))?,
        };
        Ok(ProblemDecl { name, problem, pos })
    }

    // ----------------------------------------------------------- derivations

    pub(crate) fn derivation_block(&mut self, problems: &[ProblemDecl]) -> PResult<DerivationScript> {
        if !self.at_keyword("derivation") {
            return self.error("expected 'derivation'");
        }
        self.advance();
        let (name, _) = self.name()?;
        self.expect(Tok::LBrace)?;
        self.keyword("goal")?;
        let (goal_name, gpos) = self.name()?;
        let goal = problems
            .iter()
            .find(|p| p.name == goal_name)
            .map(|p| p.problem.clone())
            .ok_or_else(|| Diagnostic::error(gpos, format!("unknown problem '{goal_name}'")))?;
        let statements = self.statements()?;
        self.expect(Tok::RBrace)?;
        Ok(DerivationScript {
            name,
            goal_name,
            goal,
            statements,
        })
    }

    fn statements(&mut self) -> PResult<Vec<Statement>> {
        let mut out = Vec::new();
        while *self.peek() != Tok::RBrace && !self.at_eof() {
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn node_path(&mut self) -> PResult<NodePath> {
        let (p, pos) = self.qident()?;
        p.parse().map_err(|m| Diagnostic::error(pos, m))
    }

    fn statement(&mut self) -> PResult<Statement> {
        let pos = self.pos();
        if self.eat_keyword("apply") {
            let rpos = self.pos();
            let (rule, _) = self.name()?;
            let rule = rule.parse::<RuleId>().map_err(|m| Diagnostic::error(rpos, m))?;
            self.keyword("at")?;
            let path = self.node_path()?;
            let args = if self.eat_keyword("with") {
                self.rule_args()?
            } else {
                RuleArgs::default()
            };
            let notes = self.annotations()?;
            Ok(Statement::Apply {
                rule,
                path,
                args,
                notes,
                pos,
            })
        } else if self.eat_keyword("discharge") {
            self.keyword("at")?;
            let path = self.node_path()?;
            let notes = self.annotations()?;
            Ok(Statement::Discharge { path, notes, pos })
        } else if self.eat_keyword("alternative") {
            let (name, _) = self.name()?;
            self.keyword("at")?;
            let path = self.node_path()?;
            let chosen = self.eat_keyword("chosen");
            self.expect(Tok::LBrace)?;
            let body = self.statements()?;
            self.expect(Tok::RBrace)?;
            Ok(Statement::Alternative {
                name,
                path,
                chosen,
                body,
                pos,
            })
        } else {
            self.unexpected("'apply', 'discharge', 'alternative' or '}'")
        }
    }

    fn rule_args(&mut self) -> PResult<RuleArgs> {
        let mut args = RuleArgs::default();
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            let kpos = self.pos();
            let (key, _) = self.name()?;
            self.expect(Tok::Colon)?;
            let dup = || Diagnostic::error(kpos, format!("argument '{key}' given twice"));
            let fresh = match key.as_str() {
                "delegate" => args.delegate.replace(self.stakeholder_ref()?).is_none(),
                "env" => args.env.replace(self.environment()?).is_none(),
                "need" => args.need.replace(self.need()?).is_none(),
                "solution" => args.solution.replace(self.change()?).is_none(),
                "first" => args.first.replace(self.sequent()?).is_none(),
                "second" => args.second.replace(self.sequent()?).is_none(),
                "direction" => {
                    let dpos = self.pos();
                    let (d, _) = self.name()?;
                    let dir = match d.as_str() {
                        "nest" => Direction::Nest,
                        "unnest" => Direction::Unnest,
                        _ => return Err(Diagnostic::error(dpos, "direction must be 'nest' or 'unnest'")),
                    };
                    args.direction.replace(dir).is_none()
                }
                _ => return Err(Diagnostic::error(kpos, format!("unknown argument '{key}'"))),
            };
            if !fresh {
                return Err(dup());
            }
            self.eat(&Tok::Comma);
        }
        Ok(args)
    }

    fn annotations(&mut self) -> PResult<Annotations> {
        let mut notes = Annotations::default();
        loop {
            if self.eat_keyword("justify") {
                self.justify(&mut notes.justification)?;
            } else if self.eat_keyword("plan") {
                self.plan(&mut notes.plan)?;
            } else if self.eat_keyword("validated") {
                self.keyword("by")?;
                let stakeholder = self.stakeholder_ref()?;
                let granted = if self.eat_keyword("granted") {
                    true
                } else if self.eat_keyword("rejected") {
                    false
                } else {
                    return self.unexpected("'granted' or 'rejected'");
                };
                notes.validations.push(ValidationClause {
                    stakeholder,
                    granted,
                });
            } else if self.eat_keyword("evidence") {
                self.expect(Tok::LBrace)?;
                while !self.eat(&Tok::RBrace) {
                    let (k, _) = self.qident()?;
                    self.expect(Tok::Colon)?;
                    let v = self.string()?;
                    notes.evidence.push((k, v));
                    self.eat(&Tok::Comma);
                }
            } else {
                return Ok(notes);
            }
        }
    }

    fn justify(&mut self, j: &mut Justification) -> PResult<()> {
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            let kpos = self.pos();
            let (kw, _) = self.qident()?;
            if kw == "risk" {
                let risk = self.string()?;
                self.keyword("mitigation")?;
                let mitigation = self.string()?;
                j.risk_register.push(Risk { risk, mitigation });
                continue;
            }
            let slot = match kw.as_str() {
                "rule" => &mut j.rule_rationale,
                "coordination" => &mut j.coordination_rationale,
                "integration" => &mut j.integration_argument,
                "dependency" => &mut j.dependency_argument,
                "feedback" => &mut j.feedback_cadence,
                "timeline" => &mut j.timeline_rationale,
                "criteria" => &mut j.validation_criteria,
                "resources" => &mut j.resource_rationale,
                _ => return Err(Diagnostic::error(kpos, format!("unknown justification field '{kw}'"))),
            };
            let text = self.string()?;
            if slot.replace(text).is_some() {
                return Err(Diagnostic::error(kpos, format!("justification field '{kw}' given twice")));
            }
        }
        Ok(())
    }

    fn id_list(&mut self) -> PResult<Vec<String>> {
        let mut out = vec![self.name()?.0];
        while self.eat(&Tok::Comma) {
            out.push(self.name()?.0);
        }
        Ok(out)
    }

    fn plan(&mut self, plan: &mut PlanFragment) -> PResult<()> {
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            if self.eat_keyword("step") {
                let (id, _) = self.name()?;
                let action = self.string()?;
                self.keyword("installs")?;
                let ipos = self.pos();
                let installs = self.change_unit()?;
                if !installs.is_atom() {
                    return Err(Diagnostic::error(ipos, "a plan step installs exactly one add, cancel or refine"));
                }
                let mut step = PlanStep {
                    id,
                    action,
                    installs,
                    after: Vec::new(),
                    parallel_ok: Vec::new(),
                    deadline: None,
                };
                loop {
                    if self.eat_keyword("after") {
                        step.after.extend(self.id_list()?);
                    } else if self.eat_keyword("parallel-ok") {
                        step.parallel_ok.extend(self.id_list()?);
                    } else if self.eat_keyword("deadline") {
                        step.deadline = Some(self.deadline()?);
                    } else {
                        break;
                    }
                }
                plan.steps.push(step);
            } else if self.eat_keyword("order") {
                let (step, _) = self.name()?;
                let kind = if self.eat_keyword("after") {
                    ConstraintKind::After
                } else if self.eat_keyword("parallel-ok") {
                    ConstraintKind::ParallelOk
                } else {
                    return self.unexpected("'after' or 'parallel-ok'");
                };
                let (other, _) = self.name()?;
                plan.constraints.push(Constraint { step, kind, other });
            } else {
                return self.unexpected("'step', 'order' or '}'");
            }
        }
        Ok(())
    }

    fn deadline(&mut self) -> PResult<Deadline> {
        if self.eat_keyword("release") {
            return Ok(Deadline::Release(self.string()?));
        }
        let pos = self.pos();
        let date = self.string()?;
        chrono::NaiveDate::parse_from_str(&date, "%Y-%m-%d")
            .map_err(|_| Diagnostic::error(pos, format!("'{date}' is not an ISO-8601 date (YYYY-MM-DD)")))?;
        Ok(Deadline::Absolute(date))
    }

    fn finish<T>(&mut self, value: T) -> PResult<T> {
        if self.at_eof() {
            Ok(value)
        } else {
            self.unexpected("end of input")
        }
    }
}

pub fn parse_model(src: &str) -> Result<Model, Diagnostics> {
    let mut p = Parser::new(src, None)?;
    let m = p.model_block()?;
    Ok(p.finish(m)?)
}

/// Parses a single `problem` block against `model`.
pub fn parse_problem(src: &str, model: &Model) -> Result<Problem, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    let decl = p.problem_block()?;
    Ok(p.finish(decl)?.problem)
}

/// Parses a file of `problem` blocks (imports are skipped).
pub fn parse_problem_file(src: &str, model: &Model) -> Result<Vec<ProblemDecl>, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    p.skip_imports()?;
    let mut out: Vec<ProblemDecl> = Vec::new();
    while !p.at_eof() {
        let decl = p.problem_block()?;
        if out.iter().any(|d| d.name == decl.name) {
            return Err(Diagnostic::error(decl.pos, format!("duplicate problem '{}'", decl.name)).into());
        }
        out.push(decl);
    }
    if out.is_empty() {
        return Err(Diagnostic::error(p.pos(), "expected 'problem'").into());
    }
    Ok(out)
}

pub fn parse_derivation(
    src: &str,
    model: &Model,
    problems: &[ProblemDecl],
) -> Result<Vec<DerivationScript>, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    p.skip_imports()?;
    let mut out = Vec::new();
    while !p.at_eof() {
        out.push(p.derivation_block(problems)?);
    }
    if out.is_empty() {
        return Err(Diagnostic::error(p.pos(), "expected 'derivation'").into());
    }
    Ok(out)
}

pub fn parse_change(src: &str, model: &Model) -> Result<ChangeExpr, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    let c = p.change()?;
    Ok(p.finish(c)?)
}

pub fn parse_need(src: &str, model: &Model) -> Result<Need, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    let n = p.need()?;
    Ok(p.finish(n)?)
}

pub fn parse_environment(src: &str, model: &Model) -> Result<Environment, Diagnostics> {
    let mut p = Parser::new(src, Some(model))?;
    let e = p.environment()?;
    Ok(p.finish(e)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEV: &str = r#"
model {
  phenomenon api.call : event
  domain OldAPI { controls api.call  description "v1 endpoints" }
  domain Docs   { observes api.call  description "developer docs" }
  stakeholder G : problem-owner { trusts D }
  stakeholder D : problem-solving-delegate
  need UpdateAPI "all clients on the new API"
}
"#;

    #[test]
    fn normative_fragment_parses() {
        let m = parse_model(DEV).unwrap();
        assert_eq!(m.state.top_names(), ["OldAPI", "Docs"]);
        assert!(m.trusts("G", "D"));
        assert_eq!(m.state.domains[0].description, "v1 endpoints");
    }

    #[test]
    fn empty_input_expects_model() {
        let e = parse_model("").unwrap_err();
        assert_eq!(e.first().message, "expected 'model'");
        assert_eq!((e.first().pos.line, e.first().pos.column), (1, 1));
    }

    #[test]
    fn duplicate_domain_reported_at_second() {
        let src = "model {\n  domain A { }\n  domain A { }\n}";
        let e = parse_model(src).unwrap_err();
        assert!(e.first().message.contains("duplicate domain 'A'"));
        assert_eq!((e.first().pos.line, e.first().pos.column), (3, 10));
    }

    #[test]
    fn undeclared_link_endpoint() {
        let src = "model {\n phenomenon a : event\n domain A { controls a causes a -> zz }\n}";
        let e = parse_model(src).unwrap_err();
        assert!(e.first().message.contains("undeclared phenomenon 'zz'"));
        assert_eq!(e.first().pos.line, 3);
    }

    #[test]
    fn unknown_trustee() {
        let e = parse_model("model { stakeholder G : problem-owner { trusts Nobody } }").unwrap_err();
        assert!(e.first().message.contains("undeclared stakeholder 'Nobody'"));
    }

    #[test]
    fn problem_block_and_sequent_agree() {
        let m = parse_model(&DEV.replace("model {", "model DevEnv {")).unwrap();
        let a = parse_problem(
            "problem upgrade { env [DevEnv.OldAPI] change ?F validator G need UpdateAPI }",
            &m,
        )
        .unwrap();
        let b = parse_problem("problem upgrade { DevEnv[OldAPI] (+) ?F |= G : UpdateAPI }", &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.env.label.as_deref(), Some("DevEnv"));
        assert_eq!(a.change, ChangeExpr::unknown("F"));
    }

    #[test]
    fn unknown_validator() {
        let m = parse_model(DEV).unwrap();
        let e = parse_problem("problem p { env [OldAPI] change ?F validator Q need UpdateAPI }", &m).unwrap_err();
        assert!(e.first().message.contains("unknown stakeholder 'Q'"));
    }

    #[test]
    fn change_precedence() {
        let src = DEV.replace("need UpdateAPI", "proposed domain B { }\n need UpdateAPI");
        let m = parse_model(&src).unwrap();
        let c = parse_change("!OldAPI ; +B || !Docs", &m).unwrap();
        match c {
            ChangeExpr::Par(l, r) => {
                assert!(matches!(*l, ChangeExpr::Seq(..)));
                assert_eq!(*r, ChangeExpr::cancel("Docs"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_change("OldAPI", &m).is_err());
        assert!(parse_change("!Nope", &m).is_err());
    }

    #[test]
    fn syntax_error_points_at_token() {
        let m = parse_model(DEV).unwrap();
        let e = parse_change("!OldAPI ;\n   ]", &m).unwrap_err();
        assert_eq!((e.first().pos.line, e.first().pos.column), (2, 4));
    }
}
