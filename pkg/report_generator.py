import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

# Configure logging for this module (after imports)
logger = logging.getLogger(__name__)

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_JUSTIFY
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import PageBreak, Paragraph, SimpleDocTemplate, Spacer

from backend.utils.artifacts import list_files, read_csv, read_json, read_jsonl, write_json
from backend.utils.formatting import coverage_chart, format_data_for_pdf, grid_table
from errors import UsageError
from harness import summarize

SUMMARY_FILE = "summary.json"
MAX_CHART_LINES = 8


def _float(value) -> float:
    return float(value) if value not in (None, "") else 0.0


def collect_campaigns(run_dir: Path) -> List[Dict[str, Any]]:
    """Every campaign directory under ``run_dir`` (one holding summary.json and timeseries.csv)"""
    campaigns = []
    for summary_file in list_files(run_dir, SUMMARY_FILE):
        campaign_dir = summary_file.parent
        series_file = campaign_dir / "timeseries.csv"
        if not series_file.exists():
            # bench-level summary, not a campaign
            continue
        data = read_json(summary_file)
        bugs_file = campaign_dir / "bugs.jsonl"
        campaigns.append({
            'dir': str(campaign_dir.relative_to(run_dir)),
            'config': data.get('config', {}),
            'summary': data.get('summary', {}),
            'series': read_csv(series_file),
            'bugs': read_jsonl(bugs_file) if bugs_file.exists() else [],
        })
    return campaigns


def aggregate_results(run_dir: Path) -> Dict[str, Any]:
    """
    Aggregate campaign CSVs under ``run_dir`` into one report structure.

    Returns:
        {'campaigns': per-campaign summaries, 'summary': medians per (target, mode, params),
         'bugs': distinct bugs across campaigns}
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"run directory not found: {run_dir}")
    campaigns = collect_campaigns(run_dir)
    if not campaigns:
        raise UsageError(f"no campaign results under {run_dir}")

    rows = [c['summary'] for c in campaigns]
    bugs: Dict[tuple, dict] = {}
    for campaign in campaigns:
        for bug in campaign['bugs']:
            key = (campaign['summary'].get('target'), bug['label'], bug['crash_block'])
            bugs.setdefault(key, {**bug, 'target': key[0], 'campaign': campaign['dir']})
    logger.info(f"📊 Aggregated {len(campaigns)} campaign(s), {len(bugs)} distinct bug(s)")
    return {
        'generated': datetime.now().isoformat(timespec='seconds'),
        'campaigns': [{'dir': c['dir'], **c['summary']} for c in campaigns],
        'summary': summarize(rows),
        'bugs': sorted(bugs.values(), key=lambda b: (b['target'] or "", b['label'], b['crash_block'])),
        'series': {
            c['dir']: [(_float(r['executions']), _float(r['error_sequences'])) for r in c['series']]
            for c in campaigns
        },
    }


class CampaignReportGenerator:
    """Static PDF report of aggregated campaign results"""

    def __init__(self):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.styles = getSampleStyleSheet()
        self._setup_custom_styles()

    def _setup_custom_styles(self):
        """Setup custom paragraph styles"""
        self.styles.add(ParagraphStyle(
            name='ReportHeader',
            parent=self.styles['Heading1'],
            fontSize=16,
            textColor=colors.darkblue,
            spaceAfter=12,
            alignment=TA_CENTER,
            fontName='Helvetica-Bold'
        ))
        self.styles.add(ParagraphStyle(
            name='ReportSectionHeader',
            parent=self.styles['Heading2'],
            fontSize=13,
            textColor=colors.darkblue,
            spaceAfter=6,
            spaceBefore=12,
            fontName='Helvetica-Bold'
        ))
        self.styles.add(ParagraphStyle(
            name='ReportBodyText',
            parent=self.styles['Normal'],
            fontSize=10,
            spaceAfter=6,
            alignment=TA_JUSTIFY,
            fontName='Helvetica'
        ))

    def generate_report(self, report_data: Dict[str, Any], output_path: str) -> str:
        """Write the PDF and return its path"""
        self.logger.info(f"📝 Building PDF report: {output_path}")
        doc = SimpleDocTemplate(
            output_path,
            pagesize=letter,
            topMargin=0.75*inch,
            bottomMargin=0.75*inch,
            leftMargin=0.75*inch,
            rightMargin=0.75*inch
        )
        story = []
        story.extend(self._create_header(report_data))
        story.extend(self._create_summary_section(report_data))
        story.extend(self._create_bug_section(report_data))
        story.append(PageBreak())
        story.extend(self._create_coverage_section(report_data))
        doc.build(story)

        if not os.path.exists(output_path):
            raise RuntimeError("PDF file was not created")
        file_size = os.path.getsize(output_path) / 1024
        self.logger.info(f"✅ PDF report generated: {file_size:.1f} KB")
        return output_path

    def _create_header(self, report_data: Dict[str, Any]) -> list:
        campaigns = report_data['campaigns']
        targets = sorted({c.get('target') for c in campaigns})
        sections = {
            'intro': {
                'type': 'paragraph',
                'content': (f"Generated {report_data['generated']} from {len(campaigns)} campaign(s) "
                            f"over {len(targets)} target(s)."),
            },
            'targets': {'type': 'bullet_points', 'content': targets},
        }
        return [Paragraph("SFI FUZZING CAMPAIGN REPORT", self.styles['ReportHeader'])] + format_data_for_pdf(sections)

    def _create_summary_section(self, report_data: Dict[str, Any]) -> list:
        header = ("Target", "Mode", "Params", "Cells", "Err. cov.", "Branch cov.", "Bugs", "First cover")
        rows = [
            (s['target'], s['mode'], s['params'], s['cells'], s['median_error_coverage'],
             s['median_branch_coverage'], s['median_bugs'],
             "-" if s['median_first_cover'] is None else s['median_first_cover'])
            for s in report_data['summary']
        ]
        return [
            Paragraph("MEDIAN COVERAGE", self.styles['ReportSectionHeader']),
            grid_table(header, rows),
            Spacer(1, 15),
        ]

    def _create_bug_section(self, report_data: Dict[str, Any]) -> list:
        elements = [Paragraph("BUGS", self.styles['ReportSectionHeader'])]
        bugs = report_data['bugs']
        if not bugs:
            elements.append(Paragraph("No crashes were observed.", self.styles['ReportBodyText']))
            return elements
        header = ("Target", "Label", "Crash block", "Depth", "Error handling", "Found at")
        rows = [
            (b['target'], b['label'], b['crash_block'], b.get('depth'),
             "yes" if b.get('error_handling') else "no", b.get('found_at'))
            for b in bugs
        ]
        elements.append(grid_table(header, rows))
        elements.append(Spacer(1, 15))
        return elements

    def _create_coverage_section(self, report_data: Dict[str, Any]) -> list:
        elements = [Paragraph("ERROR COVERAGE OVER EXECUTIONS", self.styles['ReportSectionHeader'])]
        by_target: Dict[str, Dict[str, list]] = {}
        for campaign in report_data['campaigns']:
            lines = by_target.setdefault(campaign.get('target') or "unknown", {})
            if len(lines) < MAX_CHART_LINES:
                name = f"{campaign.get('mode')} {campaign.get('params', '')} s{campaign.get('seed')}"
                lines[name] = report_data['series'].get(campaign['dir'], [])
        for target, lines in sorted(by_target.items()):
            elements.append(coverage_chart(target, lines))
            elements.append(Spacer(1, 12))
        return elements


def cmd_report(run_dir: Path, out_dir: Optional[Path] = None, pdf: bool = False) -> Dict[str, Path]:
    """Aggregate ``run_dir`` into ``report.json`` and, on request, ``report.pdf``"""
    out_dir = Path(out_dir or run_dir)
    report = aggregate_results(Path(run_dir))
    written = {'json': write_json({k: v for k, v in report.items() if k != 'series'}, out_dir / "report.json")}
    if pdf:
        written['pdf'] = Path(CampaignReportGenerator().generate_report(report, str(out_dir / "report.pdf")))
    return written
