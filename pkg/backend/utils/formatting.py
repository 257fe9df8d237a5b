from typing import Any, Mapping, Sequence

from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import ListFlowable, ListItem, Paragraph, Spacer, Table, TableStyle

SERIES_COLORS = (colors.darkblue, colors.firebrick, colors.darkgreen, colors.darkorange, colors.purple,
                 colors.teal, colors.brown, colors.olive)

GRID_TABLE_STYLE = TableStyle([
    ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
    ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
    ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ('FONTSIZE', (0, 0), (-1, 0), 9),
    ('FONTNAME', (0, 1), (-1, -1), 'Helvetica'),
    ('FONTSIZE', (0, 1), (-1, -1), 8),
    ('BOTTOMPADDING', (0, 0), (-1, -1), 4),
    ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
])


def format_data_for_pdf(data: Mapping[str, Mapping[str, Any]]) -> list:
    """
    Converts structured section data into a list of ReportLab flowables.

    Args:
        data (dict): Keys map to {"type": "header" | "paragraph" | "bullet_points", "content": ...}.

    Returns:
        list: Paragraphs, Spacers and ListFlowables ready for PDF generation.
    """
    styles = getSampleStyleSheet()
    elements = []

    header_style = ParagraphStyle(
        name='SectionHeader',
        parent=styles['Heading2'],
        fontSize=12,
        leading=18,
        spaceAfter=6,
        spaceBefore=12,
    )

    for value in data.values():
        content_type = value.get("type")
        content = value.get("content", "")

        if content_type == "header":
            elements.append(Paragraph(content, header_style))
            elements.append(Spacer(1, 0.1 * inch))

        elif content_type == "paragraph":
            elements.append(Paragraph(content, styles['BodyText']))
            elements.append(Spacer(1, 0.15 * inch))

        elif content_type == "bullet_points":
            if content:
                bullet_items = [ListItem(Paragraph(point, styles['BodyText'])) for point in content]
                elements.append(ListFlowable(bullet_items, bulletType='bullet'))
                elements.append(Spacer(1, 0.15 * inch))

    return elements


def grid_table(header: Sequence[str], rows: Sequence[Sequence[Any]], col_widths=None) -> Table:
    """Header row plus data rows in the grey-header grid style"""
    data = [list(header)] + [["" if cell is None else str(cell) for cell in row] for row in rows]
    table = Table(data, colWidths=col_widths, repeatRows=1)
    table.setStyle(GRID_TABLE_STYLE)
    return table


def coverage_chart(
    title: str,
    series: Mapping[str, Sequence[Sequence[float]]],
    width: float = 6.5 * inch,
    height: float = 3 * inch,
) -> Drawing:
    """Line chart of (x, y) series, one line per key, with a legend below the plot"""
    drawing = Drawing(width, height)
    drawing.add(String(width / 2, height - 12, title, textAnchor='middle', fontName='Helvetica-Bold', fontSize=10))

    names = [name for name, points in series.items() if points]
    plot = LinePlot()
    plot.x, plot.y = 45, 50
    plot.width, plot.height = width - 70, height - 85
    plot.data = [[(float(x), float(y)) for x, y in series[name]] for name in names] or [[(0.0, 0.0)]]
    for i in range(len(plot.data)):
        plot.lines[i].strokeColor = SERIES_COLORS[i % len(SERIES_COLORS)]
        plot.lines[i].strokeWidth = 1.2
    # flat series would otherwise collapse the axis range
    xs = [x for line in plot.data for x, _ in line]
    ys = [y for line in plot.data for _, y in line]
    plot.xValueAxis.valueMin, plot.xValueAxis.valueMax = 0, max(max(xs), 1.0)
    plot.yValueAxis.valueMin, plot.yValueAxis.valueMax = 0, max(ys) + 1.0
    plot.xValueAxis.labels.fontSize = 7
    plot.yValueAxis.labels.fontSize = 7
    drawing.add(plot)

    if names:
        legend = Legend()
        legend.x, legend.y = 45, 22
        legend.fontSize = 7
        legend.alignment = 'right'
        legend.columnMaximum = 2
        legend.colorNamePairs = [(SERIES_COLORS[i % len(SERIES_COLORS)], name) for i, name in enumerate(names)]
        drawing.add(legend)
    return drawing
