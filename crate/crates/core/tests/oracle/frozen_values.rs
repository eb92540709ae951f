// Generated by frozen.py; do not edit by hand.
pub const LOGITS_X0: [f64; 10] = [-0.13644410201369045, -1.9667492117516885, -0.5321213866317813, 1.7858629082278517, 1.139197418877787, -0.9907064246503211, -0.8382899503319584, 0.7057429290905041, 1.0781961688910802, -0.33922708446569977];
pub const VPG_VALUE: f64 = -4.33156027331264;
pub const VPG_GRAD: [f64; 28] = [0.2322688665451706, 0.6918741700907926, 0.0, 0.0, -0.10112074705586165, -0.05409936277417236, -0.016216191338555702, -0.00867562437563166, -0.06807690578687506, -0.03642098510875094, 0.547527032938558, 0.2929256799027202, -0.36211318875726567, -0.19372970764416533, -0.8647116833552874, 1.955882712896918, 0.0, 0.0, 0.12401465099494964, -1.0693372123487306, -0.035816229991142055, 0.3088314745741498, -0.16774316364781502, 1.4463936766069379, 0.0, -0.0, 0.0795447426440075, -0.6858879388323574];
pub const VPG_SWR_VALUE: f64 = -5.65094881713207;
pub const VPG_SWR_GRAD: [f64; 28] = [0.2322688665451706, 0.6918741700907926, 0.0, 0.0, -0.10112074705586165, -0.05409936277417236, -0.016216191338555702, -0.00867562437563166, -0.06807690578687506, -0.03642098510875094, 0.547527032938558, 0.2929256799027202, -0.36211318875726567, -0.19372970764416533, 0.667098150782722, 3.0061793091892146, 0.0, 0.0, 0.1226652180483213, -1.0577014995210756, -0.018488965907685437, 0.1594242220924382, -0.08659196221095239, 0.7466537763045217, -0.1256701020840822, 1.0836116181437747, 0.10808581215439875, -0.931988117019659];
pub const CAPG_VALUES: [f64; 5] = [-0.9695416615068869, -0.9656526895032687, -0.12210132303458476, -0.04766208910069932, -0.3562874023770842];
pub const CAPG_GRAD_ITEM2: [f64; 28] = [-0.01326695259839307, -0.0044269410028481325, 0.0, 0.0, -0.0007636028217695162, -0.00040852572071555025, -0.00012245488512495855, -6.551307666056964e-05, 0.008841050928327519, 0.004729941534275864, -0.0052205330756604435, -0.002792972965070166, -0.002734460145772599, -0.0014629297718295774, -0.0634158279514925, -0.3064825019707483, 0.0, 0.0, -0.008470476288690038, 0.0730381082327337, -0.009865099384039329, 0.0850634807277843, 0.023170099379015992, -0.19978808375478974, 0.0, -0.0, -0.004834523706286625, 0.04168649479427173];
pub const CAPG_SWR_VALUES: [f64; 5] = [-1.6285550449559762, -1.9204227129721398, -0.38568956122732634, 0.3819511445455591, -0.6691962665705006];
pub const CAPG_SWR_GRAD_ITEM2: [f64; 28] = [-0.1419790166839264, -0.047375817908497146, 0.0, 0.0, -0.008171852350255554, -0.0043719218627728835, -0.0013104760908161095, -0.0007011016384676753, 0.09461432140855726, 0.050618440295798574, -0.05586860638500818, -0.029889573529755662, -0.029263386582477426, -0.015655843264802356, 0.736871800477157, -0.07520089588675494, 0.0, 0.0, -0.007296136536456574, 0.06291216595955203, -0.008497410251625396, 0.07327035086384001, 0.08754745845528984, -0.7548927035774864, -0.05775717360851431, 0.4980209557835675, -0.01399673805869358, 0.12068923097052701];
pub const EXACT_CAPG_VALUES: [f64; 5] = [-1.1772233902873819, -1.2469351815568754, -0.1887020756535045, -0.06402552994471122, -0.4486830332940692];
pub const EXACT_CAPG_GRAD_ITEM2: [f64; 28] = [-0.006022152381744313, 0.04665825878418493, 0.0, 0.0, -0.014671720165060222, -0.007849335916122694, -0.0021538346243235307, -0.0011522964781152452, 0.014138286765449048, 0.007563950297032253, 0.02871961793448824, 0.01536492831204259, -0.026032349910553483, -0.013927246214836876, -0.0020528306970192633, -0.3236874690766032, 0.0, 0.0, -0.008654362413931735, 0.0746236973141687, -0.010521196510538875, 0.09072078868819303, 0.03063082067633559, -0.26411940953105983, -0.0038279636443788847, 0.03300726115512838, -0.007627298107486089, 0.06576766237356967];
pub const LSR_MARGINALS: [f64; 6] = [0.4201282021864867, 0.3241998209284527, 0.25567197688506055, 0.3458583691736634, 0.3462495593443415, 0.3078920714819951];
pub const POLICY_VALUE: f64 = 2.1745580081902025;
pub const VALUE_GRAD: [f64; 28] = [-0.0035346117271316323, 0.012870818164872552, 0.042082462405683585, 0.018133958234118102, -0.001411341016996309, -0.0020783134689211663, 0.0007255000449048997, 0.0007670146962974777, 0.026280219751751585, -0.004655674947901739, -0.0046899620867541306, 0.009737320594187006, -0.020904416692906234, -0.003770346873661646, 0.048169524682790066, -0.017671796164969115, -0.10276325036775799, -0.04000676611741732, -0.03365970565236146, -0.03162136333113191, -0.007886303495047604, -0.03548784222133905, -0.01471142461314057, -0.05381172970265247, 0.007400705791118548, 0.016040371056297353, 0.04885672796943116, 0.10488056419882621];
pub const EXPECTED_VPG: [f64; 28] = [-0.0035346117271316323, 0.012870818164872552, 0.042082462405683585, 0.018133958234118102, -0.001411341016996309, -0.0020783134689211663, 0.0007255000449048997, 0.0007670146962974777, 0.026280219751751585, -0.004655674947901739, -0.0046899620867541306, 0.009737320594187006, -0.020904416692906234, -0.003770346873661646, 0.048169524682790066, -0.017671796164969115, -0.10276325036775799, -0.04000676611741732, -0.03365970565236146, -0.03162136333113191, -0.007886303495047604, -0.03548784222133905, -0.01471142461314057, -0.05381172970265247, 0.007400705791118548, 0.016040371056297353, 0.04885672796943116, 0.10488056419882621];
pub const EXPECTED_VPG_SWR: [f64; 28] = [-0.0035346117271316236, 0.012870818164872533, 0.0420824624056835, 0.018133958234118026, -0.0014113410169962583, -0.0020783134689211485, 0.0007255000449048487, 0.0007670146962974872, 0.026280219751751592, -0.004655674947901736, -0.004689962086754113, 0.009737320594187002, -0.020904416692906234, -0.003770346873661646, 1.2135343156982523, 1.1805637170882715, -1.151512599442087, -0.5857642774317183, 0.12479567960823033, 0.02095627539277395, -0.43189674381223436, -0.9224578548849137, 0.10675822912769334, -0.10523808487299995, -0.05069326131494279, 0.8138327764154611, 0.25103609639125285, 0.19290688794967756];
pub const EXPECTED_CAPG: [f64; 28] = [-0.013813639701012131, -0.028461031858628215, 0.09851802227141607, 0.15884902514499274, 0.027481070793467385, 0.00016422235788893323, 0.06579934664297743, -0.013722322804149638, -0.03756111656222737, 0.009392336202651006, -0.05459584028677626, 0.0009407174553496284, -0.0011234605874412655, 0.0032250467882600727, 0.05252909170800158, -0.08678269892843903, -0.08387970552812668, -0.044704086275125704, -0.044176351544224265, -0.027577148418028212, 0.010130089374683886, -0.021056472456216935, -0.01981413778082687, -0.08506172284018765, 0.021525629424985614, 0.00180876391635423, 0.032334770525381494, 0.1318865797980783];
pub const EXPECTED_CAPG_SWR: [f64; 28] = [-0.08160857676623229, -0.06305914382960633, 0.31269351014574154, 0.36089550302104795, 0.06456518283604896, -0.0049539588199507874, 0.1757664351180069, -0.033696316600236115, -0.03808924166955, 0.0316074672883914, -0.08891190573158432, -0.0048529665196645755, -0.11333047055292167, 0.011895774651460097, 0.473429503757333, 0.213331698614445, -0.48185288566672646, -0.3212133503647943, -0.08300263290360678, -0.12369923890527494, -0.12305964345560005, -0.29425908390655514, 0.053714031066575116, -0.14821496833473877, -0.012157667290211794, 0.24738463766925062, 0.16450591258284347, 0.31878865347731855];
pub const EXPECTED_EXACT: [f64; 28] = [-0.008699236241550319, 0.028400830085035838, 0.058442900823420005, 0.04372005596286059, 0.0016025252428519153, -0.004051724162899837, 0.01107307468083493, -0.0007159874773118547, 0.02368272895840901, -0.002105715702655127, 0.003692925312970493, 0.019251763087135308, -0.04005125419506657, -0.012378335744268568, 0.10092392185604691, -0.03297970587639486, -0.14963736626578775, -0.09158077828968222, -0.06286873825507366, -0.06278861664530033, -0.009167111631195844, -0.06244865413298943, -0.007612117092288432, -0.07258364834821844, 0.011233460040431591, 0.02346594889685017, 0.068414506938126, 0.17435497022965882];
pub const PROPENSITY_X0: [f64; 5] = [0.46030042212828104, 0.6206646082729921, 0.6789080629153961, 0.5403279026379892, 0.37864205998856465];
pub const PAIR_LOGITS: [f64; 5] = [0.3, -1.2, 0.8, 0.0, 1.5];
pub const PAIR_PROBS: [f64; 20] = [0.005424899801866568, 0.04008488896706985, 0.018011301636327335, 0.08072105368609031, 0.004796784026605869, 0.007908559855619706, 0.003553545007584646, 0.015925883821446503, 0.04500608479124687, 0.010042214907124727, 0.033341327654902025, 0.14942546374153468, 0.017257389319698856, 0.0038506440426482086, 0.02845262484814072, 0.05729655032258511, 0.13256146555405435, 0.029578461038586707, 0.21855690793415172, 0.09820394904271534];
